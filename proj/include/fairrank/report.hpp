#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fairrank {

// Parsed results file. Rows keep the header's column order.
struct ResultsTable {
  std::vector<std::string> header;
  std::vector<std::string> group_names;  // from the skew_<group> columns
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws ConfigError if absent
};

// Checks the header against the fixed schema and throws ConfigError naming
// the first offending column.
ResultsTable ParseResultsCsv(std::istream& in);
ResultsTable ReadResultsCsv(const std::filesystem::path& path);

struct MarginalRow {
  std::string value;
  std::size_t rows = 0;
  std::optional<double> eta_skew;  // mean over rows where the value is defined
  std::optional<double> eta_attention;
  std::optional<double> delta_ndcg_pct;
};

struct MarginalTable {
  std::string variable;
  std::vector<MarginalRow> rows;
};

// Variables summarized, in output order.
const std::vector<std::string>& MarginalVariables();

// Arithmetic means of eta_skew, eta_attention and delta_ndcg_pct grouped by
// one variable at a time, averaging over every other axis. Numeric
// variables are sorted by value, the rest keep first-appearance order.
std::vector<MarginalTable> ComputeMarginals(const ResultsTable& table);

void WriteMarginalCsv(std::ostream& os, const MarginalTable& table);
void WriteMarginalText(std::ostream& os, const MarginalTable& table);

// Writes <variable>.csv for each table plus summary.txt into `out_dir`.
// Returns the tables; an empty results file yields tables with no rows.
std::vector<MarginalTable> WriteSummary(const ResultsTable& table, const std::filesystem::path& out_dir);

}  // namespace fairrank
