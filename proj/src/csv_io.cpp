#include "sor/csv_io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sor/errors.hpp"

namespace sor {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

// Full-token numeric parse; no trailing garbage allowed.
bool parse_double(const std::string& tok, double& out) {
  if (tok.empty()) return false;
  char* endp = nullptr;
  out = std::strtod(tok.c_str(), &endp);
  return endp == tok.c_str() + tok.size();
}

class IssueCollector {
 public:
  explicit IssueCollector(std::string origin) : origin_(std::move(origin)) {}
  void add(std::size_t line, const std::string& what) {
    if (count_ < 10) {
      if (!msg_.empty()) msg_ += "; ";
      msg_ += "line " + std::to_string(line) + ": " + what;
    } else if (count_ == 10) {
      msg_ += "; ...";
    }
    ++count_;
  }
  void raise_if_any() const {
    if (count_ > 0) throw DataError(origin_ + ": " + msg_);
  }
  bool any() const { return count_ > 0; }

 private:
  std::string origin_;
  std::string msg_;
  std::size_t count_ = 0;
};

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Dataset parse_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw DataError(origin + ": empty input (missing header)");

  const auto header = split_line(line);
  int iy = -1, ir1 = -1, ir2 = -1;
  std::vector<int> xcols;
  std::vector<std::string> xnames;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = trim(header[c]);
    if (name == "y")
      iy = static_cast<int>(c);
    else if (name == "r1")
      ir1 = static_cast<int>(c);
    else if (name == "r2")
      ir2 = static_cast<int>(c);
    else if (name.empty())
      throw DataError(origin + ": line 1: empty column name");
    else {
      xcols.push_back(static_cast<int>(c));
      xnames.push_back(name);
    }
  }
  if (iy < 0 || ir1 < 0 || ir2 < 0)
    throw DataError(origin + ": line 1: header must include y, r1 and r2");
  if (xcols.empty())
    throw DataError(origin + ": line 1: no covariate columns");

  Dataset data;
  data.covariate_names = xnames;
  IssueCollector issues(origin);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto toks = split_line(line);
    if (toks.size() != header.size()) {
      issues.add(lineno, "expected " + std::to_string(header.size()) +
                             " fields, got " + std::to_string(toks.size()));
      continue;
    }
    ObservationRecord rec;
    bool bad = false;
    auto flag_int = [&](int col, const char* what) -> int {
      const std::string tok = trim(toks[static_cast<std::size_t>(col)]);
      if (tok == "0") return 0;
      if (tok == "1") return 1;
      issues.add(lineno, std::string(what) + " must be 0 or 1, got '" + tok + "'");
      bad = true;
      return 0;
    };
    const int r1 = flag_int(ir1, "r1");
    const int r2 = flag_int(ir2, "r2");
    if (!bad && r1 == 1 && r2 == 0) {
      issues.add(lineno, "r2 < r1 (a first-call respondent cannot be missing)");
      bad = true;
    }
    rec.r1 = r1 == 1;
    rec.r2 = r2 == 1;

    const std::string ytok = trim(toks[static_cast<std::size_t>(iy)]);
    if (ytok == "NA") {
      if (!bad && r2 == 1) {
        issues.add(lineno, "y is NA but r2 = 1");
        bad = true;
      }
    } else {
      double y = 0;
      if (!parse_double(ytok, y)) {
        issues.add(lineno, "bad y value '" + ytok + "'");
        bad = true;
      } else if (!bad && r2 == 0) {
        issues.add(lineno, "y must be NA when r2 = 0");
        bad = true;
      } else {
        rec.y = y;
      }
    }

    rec.x.resize(static_cast<Eigen::Index>(xcols.size()));
    for (std::size_t k = 0; k < xcols.size(); ++k) {
      double v = 0;
      const std::string tok = trim(toks[static_cast<std::size_t>(xcols[k])]);
      if (!parse_double(tok, v)) {
        issues.add(lineno, "bad value '" + tok + "' in column " + xnames[k]);
        bad = true;
      }
      rec.x[static_cast<Eigen::Index>(k)] = v;
    }
    if (!bad) data.records.push_back(std::move(rec));
  }
  issues.raise_if_any();
  if (data.records.empty()) throw DataError(origin + ": no data rows");
  return data;
}

std::string format_csv(const Dataset& data) {
  std::string out;
  for (const auto& name : data.covariate_names) out += name + ",";
  out += "y,r1,r2\n";
  for (const auto& rec : data.records) {
    for (Eigen::Index k = 0; k < rec.x.size(); ++k) out += fmt17(rec.x[k]) + ",";
    out += (rec.y ? fmt17(*rec.y) : std::string("NA"));
    out += rec.r1 ? ",1" : ",0";
    out += rec.r2 ? ",1\n" : ",0\n";
  }
  return out;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path);
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << format_csv(data);
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace sor
