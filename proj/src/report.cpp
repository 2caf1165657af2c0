#include "fairrank/report.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "fairrank/common.hpp"
#include "fairrank/harness.hpp"

namespace fairrank {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

const std::vector<std::string> kLeading = {"query", "reranker", "embedding", "classifier",
                                           "objective", "pr", "k", "seed"};
const std::vector<std::string> kTrailing = {"ndcg_oracle",   "ndcg_attacked",  "eta_skew",
                                            "eta_attention", "delta_ndcg_pct", "flags"};

void CheckHeader(const std::vector<std::string>& header, std::vector<std::string>& group_names) {
  auto mismatch = [&](std::size_t i, const std::string& expected) {
    const std::string got = i < header.size() ? "'" + header[i] + "'" : "end of header";
    throw ConfigError("results schema mismatch at column " + std::to_string(i + 1) + ": found " + got +
                      ", expected '" + expected + "'");
  };
  std::size_t i = 0;
  for (const auto& name : kLeading) {
    if (i >= header.size() || header[i] != name) mismatch(i, name);
    ++i;
  }
  while (i < header.size() && header[i].starts_with("skew_")) group_names.push_back(header[i++].substr(5));
  if (group_names.empty()) mismatch(i, "skew_<group>");
  for (const auto& g : group_names) {
    if (i >= header.size() || header[i] != "attn_" + g) mismatch(i, "attn_" + g);
    ++i;
  }
  for (const auto& name : kTrailing) {
    if (i >= header.size() || header[i] != name) mismatch(i, name);
    ++i;
  }
  if (i != header.size()) throw ConfigError("results schema mismatch: unexpected column '" + header[i] + "'");
}

std::optional<double> ParseDouble(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

struct Accumulator {
  std::size_t rows = 0;
  double sum[3] = {0, 0, 0};
  std::size_t count[3] = {0, 0, 0};
};

}  // namespace

std::size_t ResultsTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ConfigError("results file has no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

ResultsTable ParseResultsCsv(std::istream& in) {
  ResultsTable t;
  std::string line;
  if (!std::getline(in, line)) return t;  // empty file: no header, no rows
  t.header = SplitCsvLine(line);
  CheckHeader(t.header, t.group_names);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto row = SplitCsvLine(line);
    if (row.size() != t.header.size()) {
      throw ConfigError("results line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                        " fields, expected " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

ResultsTable ReadResultsCsv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open results file '" + path.string() + "'");
  return ParseResultsCsv(in);
}

const std::vector<std::string>& MarginalVariables() {
  static const std::vector<std::string> vars = {"pr", "k", "objective", "embedding", "classifier", "query",
                                                "reranker"};
  return vars;
}

std::vector<MarginalTable> ComputeMarginals(const ResultsTable& table) {
  std::vector<MarginalTable> out;
  const std::vector<std::string> metrics = {"eta_skew", "eta_attention", "delta_ndcg_pct"};
  for (const auto& var : MarginalVariables()) {
    MarginalTable mt;
    mt.variable = var;
    if (table.header.empty()) {
      out.push_back(std::move(mt));
      continue;
    }
    const std::size_t col = table.column(var);
    std::size_t metric_col[3];
    for (int m = 0; m < 3; ++m) metric_col[m] = table.column(metrics[static_cast<std::size_t>(m)]);

    std::vector<std::string> order;
    std::map<std::string, Accumulator> acc;
    for (const auto& row : table.rows) {
      const auto& key = row[col];
      auto [it, inserted] = acc.try_emplace(key);
      if (inserted) order.push_back(key);
      auto& a = it->second;
      ++a.rows;
      for (int m = 0; m < 3; ++m) {
        const auto& cell = row[metric_col[m]];
        if (cell.empty()) continue;
        const auto v = ParseDouble(cell);
        if (!v) throw ConfigError("results column '" + metrics[static_cast<std::size_t>(m)] +
                                  "' holds a non-numeric value '" + cell + "'");
        a.sum[m] += *v;
        ++a.count[m];
      }
    }
    const bool numeric = std::all_of(order.begin(), order.end(), [](const std::string& s) {
      return ParseDouble(s).has_value();
    });
    if (numeric) {
      std::stable_sort(order.begin(), order.end(),
                       [](const std::string& a, const std::string& b) { return *ParseDouble(a) < *ParseDouble(b); });
    }
    for (const auto& key : order) {
      const auto& a = acc.at(key);
      MarginalRow r;
      r.value = key;
      r.rows = a.rows;
      std::optional<double>* dst[3] = {&r.eta_skew, &r.eta_attention, &r.delta_ndcg_pct};
      for (int m = 0; m < 3; ++m) {
        if (a.count[m] > 0) *dst[m] = a.sum[m] / static_cast<double>(a.count[m]);
      }
      mt.rows.push_back(std::move(r));
    }
    out.push_back(std::move(mt));
  }
  return out;
}

void WriteMarginalCsv(std::ostream& os, const MarginalTable& table) {
  auto opt = [](const std::optional<double>& v) { return v ? FormatNumber(*v) : std::string(); };
  os << table.variable << ",rows,eta_skew_mean,eta_attention_mean,delta_ndcg_pct_mean\n";
  for (const auto& r : table.rows) {
    os << r.value << ',' << r.rows << ',' << opt(r.eta_skew) << ',' << opt(r.eta_attention) << ','
       << opt(r.delta_ndcg_pct) << '\n';
  }
}

void WriteMarginalText(std::ostream& os, const MarginalTable& table) {
  auto fixed = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(3) << *v;
    return s.str();
  };
  std::vector<std::vector<std::string>> cells = {
      {table.variable, "rows", "eta_skew", "eta_attention", "delta_ndcg_pct"}};
  for (const auto& r : table.rows) {
    cells.push_back({r.value, std::to_string(r.rows), fixed(r.eta_skew), fixed(r.eta_attention),
                     fixed(r.delta_ndcg_pct)});
  }
  std::vector<std::size_t> width(5, 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    os << '\n';
  }
}

std::vector<MarginalTable> WriteSummary(const ResultsTable& table, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto tables = ComputeMarginals(table);
  std::ofstream text(out_dir / "summary.txt", std::ios::binary);
  for (const auto& t : tables) {
    std::ofstream csv(out_dir / (t.variable + ".csv"), std::ios::binary);
    WriteMarginalCsv(csv, t);
    text << "== eta and delta NDCG by " << t.variable << '\n';
    WriteMarginalText(text, t);
    text << '\n';
  }
  return tables;
}

}  // namespace fairrank
