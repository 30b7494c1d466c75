#include "balpol/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "balpol/simd.hpp"

namespace balpol {

ValidationResult validate_dataset(const LoggedDataset& ds) {
  ValidationResult r;
  auto add = [&r](std::string msg) {
    r.ok = false;
    r.violations.push_back(std::move(msg));
  };
  const std::size_t n = ds.Y.size();
  if (n == 0) add("dataset is empty");
  if (ds.T.size() != n || ds.X.rows() != n)
    add("inconsistent lengths: X has " + std::to_string(ds.X.rows()) + " rows, T has " +
        std::to_string(ds.T.size()) + ", Y has " + std::to_string(n));
  if (ds.m < 2) add("treatment count m must be >= 2, got " + std::to_string(ds.m));
  const std::size_t rows = std::min(n, std::min(ds.T.size(), ds.X.rows()));
  for (std::size_t i = 0; i < rows; ++i) {
    if (ds.T[i] < 0 || ds.T[i] >= ds.m)
      add("treatment index out of range at row " + std::to_string(i));
    if (!std::isfinite(ds.Y[i])) add("non-finite outcome at row " + std::to_string(i));
    for (std::size_t j = 0; j < ds.X.cols(); ++j)
      if (!std::isfinite(ds.X(i, j))) {
        add("non-finite covariate at row " + std::to_string(i));
        break;
      }
  }
  return r;
}

PolicyAssignment assignment_of(const Policy& policy, const la::Mat& X) {
  const int m = policy.arms();
  PolicyAssignment pa{la::Mat(X.rows(), m)};
  for (std::size_t i = 0; i < X.rows(); ++i) {
    double* row = pa.P.row(i);
    policy.probabilities(X.row(i), X.cols(), row);
    double s = 0.0;
    for (int t = 0; t < m; ++t) {
      if (row[t] < 0.0)
        throw std::invalid_argument("policy returned negative probability at row " +
                                    std::to_string(i));
      s += row[t];
    }
    if (std::fabs(s - 1.0) > 1e-9)
      throw std::invalid_argument("policy probabilities at row " + std::to_string(i) +
                                  " sum to " + std::to_string(s));
  }
  return pa;
}

void LogitPolicy::probabilities(const double* x, std::size_t d, double* out) const {
  const int m = arms();
  if (beta_.cols() != d + 1)
    throw std::invalid_argument("logit policy dimension mismatch");
  double mx = -1e300;
  for (int t = 0; t < m; ++t) {
    out[t] = beta_(t, 0) + simd::dot(beta_.row(t) + 1, x, d);
    mx = std::max(mx, out[t]);
  }
  double s = 0.0;
  for (int t = 0; t < m; ++t) {
    out[t] = std::exp(out[t] - mx);
    s += out[t];
  }
  for (int t = 0; t < m; ++t) out[t] /= s;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_real(const std::string& s, std::size_t line_no, const std::string& path) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) +
                             ": cannot parse '" + s + "' as a number");
  }
}

}  // namespace

LoggedDataset load_dataset_csv(const std::string& path, bool maximize, int m_override) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[header.size() - 2] != "t" || header.back() != "y")
    throw std::runtime_error(path + ": expected header x1,...,xd,t,y");
  const std::size_t d = header.size() - 2;

  std::vector<double> xs;
  std::vector<int> ts;
  la::Vec ys;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " fields, got " +
                               std::to_string(f.size()));
    for (std::size_t j = 0; j < d; ++j) xs.push_back(parse_real(f[j], line_no, path));
    const double traw = parse_real(f[d], line_no, path);
    const int t = static_cast<int>(traw);
    if (traw != t || t < 1)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": treatment must be a positive integer");
    ts.push_back(t - 1);  // 1-based on disk
    double y = parse_real(f[d + 1], line_no, path);
    ys.push_back(maximize ? -y : y);
  }
  const std::size_t n = ys.size();
  LoggedDataset ds;
  ds.X = la::Mat(n, d);
  std::copy(xs.begin(), xs.end(), ds.X.data());
  ds.T = std::move(ts);
  ds.Y = std::move(ys);
  int m = 0;
  for (int t : ds.T) m = std::max(m, t + 1);
  ds.m = m_override > 0 ? m_override : m;
  return ds;
}

void write_dataset_csv(const std::string& path, const LoggedDataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (std::size_t j = 0; j < ds.dim(); ++j) out << "x" << (j + 1) << ",";
  out << "t,y\n";
  char buf[32];
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.X(i, j));
      out << buf << ",";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", ds.Y[i]);
    out << (ds.T[i] + 1) << "," << buf << "\n";
  }
}

la::Mat load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  const std::size_t cols = split_csv_line(line).size();
  std::vector<double> vals;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != cols)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": ragged row");
    for (const auto& s : f) vals.push_back(parse_real(s, line_no, path));
  }
  la::Mat m(vals.size() / cols, cols);
  std::copy(vals.begin(), vals.end(), m.data());
  return m;
}

}  // namespace balpol
