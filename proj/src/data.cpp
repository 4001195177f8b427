#include "bvcox/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "bvcox/error.hpp"

namespace bvcox {

std::size_t Dataset::event_count(int cause_code) const {
  return static_cast<std::size_t>(std::count(cause.begin(), cause.end(), cause_code));
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.stratum_labels = stratum_labels;
  out.z_names = z_names;
  out.w_names = w_names;
  out.num_causes = num_causes;
  out.z.resize(static_cast<Eigen::Index>(rows.size()), z.cols());
  out.w.resize(static_cast<Eigen::Index>(rows.size()), w.cols());
  out.stratum.reserve(rows.size());
  out.time.reserve(rows.size());
  out.cause.reserve(rows.size());
  out.modifier.reserve(rows.size());
  Eigen::Index r = 0;
  for (std::size_t row : rows) {
    if (row >= n()) throw ValidationError("Dataset::subset: row out of range");
    out.stratum.push_back(stratum[row]);
    out.time.push_back(time[row]);
    out.cause.push_back(cause[row]);
    out.modifier.push_back(modifier[row]);
    out.z.row(r) = z.row(static_cast<Eigen::Index>(row));
    out.w.row(r) = w.row(static_cast<Eigen::Index>(row));
    ++r;
  }
  return out;
}

Dataset Dataset::single_cause(int cause_code) const {
  Dataset out = *this;
  for (int& c : out.cause) c = (c == cause_code) ? 1 : 0;
  out.num_causes = 1;
  return out;
}

void finalize_dataset(Dataset& ds) {
  const std::size_t n = ds.n();
  if (ds.cause.size() != n || ds.modifier.size() != n || ds.stratum.size() != n ||
      static_cast<std::size_t>(ds.z.rows()) != n || static_cast<std::size_t>(ds.w.rows()) != n) {
    throw ValidationError("dataset columns have inconsistent lengths");
  }
  if (ds.num_causes < 1) throw ValidationError("dataset needs at least one failure type");
  if (static_cast<std::size_t>(ds.z.cols()) != ds.z_names.size() ||
      static_cast<std::size_t>(ds.w.cols()) != ds.w_names.size()) {
    throw ValidationError("covariate names do not match covariate columns");
  }
  std::vector<std::size_t> keep;
  keep.reserve(n);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(ds.time[i]) || ds.time[i] < 0.0) {
      throw ValidationError("row " + std::to_string(i + 1) + ": observed time must be finite and >= 0");
    }
    if (ds.cause[i] < 0 || ds.cause[i] > ds.num_causes) {
      throw ValidationError("row " + std::to_string(i + 1) + ": unknown cause code " +
                            std::to_string(ds.cause[i]));
    }
    if (!std::isfinite(ds.modifier[i])) {
      throw ValidationError("row " + std::to_string(i + 1) + ": modifier must be finite");
    }
    if (ds.stratum[i] < 0 || ds.stratum[i] >= ds.num_strata()) {
      throw ValidationError("row " + std::to_string(i + 1) + ": stratum index out of range");
    }
    if (!ds.z.row(static_cast<Eigen::Index>(i)).allFinite() ||
        !ds.w.row(static_cast<Eigen::Index>(i)).allFinite()) {
      throw ValidationError("row " + std::to_string(i + 1) + ": covariates must be finite");
    }
    if (ds.time[i] == 0.0 && ds.cause[i] == 0) {
      ++dropped;
      continue;
    }
    keep.push_back(i);
  }
  if (dropped > 0) {
    std::vector<std::string> warnings = ds.warnings;
    ds = ds.subset(keep);
    ds.warnings = std::move(warnings);
    ds.warnings.push_back("dropped " + std::to_string(dropped) +
                          " censored subject(s) with zero observed time");
  }
}

DatasetSummary summarize(const Dataset& ds) {
  DatasetSummary s;
  s.n = ds.n();
  s.strata = ds.num_strata();
  s.events_per_cause.assign(static_cast<std::size_t>(ds.num_causes), 0);
  for (int c : ds.cause) {
    if (c == 0) {
      ++s.censored;
    } else {
      ++s.events_per_cause[static_cast<std::size_t>(c - 1)];
    }
  }
  return s;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

double parse_double(std::string_view field, std::size_t line_no, const std::string& column) {
  double value = 0.0;
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc{} || ptr != end) {
    throw ValidationError("line " + std::to_string(line_no) + ": column '" + column +
                          "' is missing or non-numeric ('" + std::string(field) + "')");
  }
  return value;
}

int parse_int(std::string_view field, std::size_t line_no, const std::string& column) {
  int value = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc{} || ptr != end) {
    throw ValidationError("line " + std::to_string(line_no) + ": column '" + column +
                          "' is missing or not an integer ('" + std::string(field) + "')");
  }
  return value;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Dataset parse_csv(const std::string& text, const CsvSchema& schema) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    for (std::string_view f : split_fields(line)) header.emplace_back(f);
    break;
  }
  if (header.empty()) throw ValidationError("CSV input has no header row");

  auto column_of = [&](const std::string& name, bool required) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      if (required) throw ValidationError("CSV header lacks required column '" + name + "'");
      return -1;
    }
    return static_cast<int>(it - header.begin());
  };
  const int time_col = column_of(schema.time_col, true);
  const int cause_col = column_of(schema.cause_col, true);
  const int mod_col = column_of(schema.modifier_col, true);
  const int stratum_col = column_of(schema.stratum_col, false);
  std::vector<int> z_idx;
  std::vector<int> w_idx;
  for (const auto& c : schema.z_cols) z_idx.push_back(column_of(c, true));
  for (const auto& c : schema.w_cols) w_idx.push_back(column_of(c, true));

  Dataset ds;
  ds.z_names = schema.z_cols;
  ds.w_names = schema.w_cols;
  std::vector<double> zbuf;
  std::vector<double> wbuf;
  std::unordered_map<std::string, int> label_index;
  int max_cause = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line).front() == '#') continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(fields.size()));
    }
    const double t = parse_double(fields[static_cast<std::size_t>(time_col)], line_no, schema.time_col);
    if (!std::isfinite(t) || t < 0.0) {
      throw ValidationError("line " + std::to_string(line_no) + ": negative or non-finite time");
    }
    const int c = parse_int(fields[static_cast<std::size_t>(cause_col)], line_no, schema.cause_col);
    if (c < 0 || (schema.num_causes > 0 && c > schema.num_causes)) {
      throw ValidationError("line " + std::to_string(line_no) + ": unknown cause code " + std::to_string(c));
    }
    max_cause = std::max(max_cause, c);
    std::string label = stratum_col >= 0 ? std::string(fields[static_cast<std::size_t>(stratum_col)]) : "1";
    if (label.empty()) throw ValidationError("line " + std::to_string(line_no) + ": empty stratum label");
    auto [it, inserted] = label_index.try_emplace(label, static_cast<int>(ds.stratum_labels.size()));
    if (inserted) ds.stratum_labels.push_back(label);

    ds.time.push_back(t);
    ds.cause.push_back(c);
    ds.stratum.push_back(it->second);
    ds.modifier.push_back(parse_double(fields[static_cast<std::size_t>(mod_col)], line_no, schema.modifier_col));
    for (std::size_t k = 0; k < z_idx.size(); ++k) {
      zbuf.push_back(parse_double(fields[static_cast<std::size_t>(z_idx[k])], line_no, schema.z_cols[k]));
    }
    for (std::size_t k = 0; k < w_idx.size(); ++k) {
      wbuf.push_back(parse_double(fields[static_cast<std::size_t>(w_idx[k])], line_no, schema.w_cols[k]));
    }
  }
  const auto n = static_cast<Eigen::Index>(ds.time.size());
  if (n == 0) throw ValidationError("CSV input has no data rows");
  const auto p = static_cast<Eigen::Index>(z_idx.size());
  const auto q = static_cast<Eigen::Index>(w_idx.size());
  ds.z = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(zbuf.data(), n, p);
  ds.w = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(wbuf.data(), n, q);
  ds.num_causes = schema.num_causes > 0 ? schema.num_causes : std::max(max_cause, 1);
  finalize_dataset(ds);
  return ds;
}

Dataset ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open CSV file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema);
}

std::string format_csv(const Dataset& ds, const std::string& comment) {
  std::ostringstream out;
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "stratum,time,cause,modifier";
  for (const auto& name : ds.z_names) out << ',' << name;
  for (const auto& name : ds.w_names) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << ds.stratum_labels[static_cast<std::size_t>(ds.stratum[i])] << ',' << format_double(ds.time[i]) << ','
        << ds.cause[i] << ',' << format_double(ds.modifier[i]);
    for (Eigen::Index l = 0; l < ds.z.cols(); ++l) out << ',' << format_double(ds.z(r, l));
    for (Eigen::Index l = 0; l < ds.w.cols(); ++l) out << ',' << format_double(ds.w(r, l));
    out << '\n';
  }
  return out.str();
}

void write_csv(const std::filesystem::path& path, const Dataset& ds, const std::string& comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write CSV file " + path.string());
  out << format_csv(ds, comment);
}

std::size_t RiskIndex::failure_time_count(int cause_code) const {
  std::size_t total = 0;
  for (const auto& s : strata) total += s.failures[static_cast<std::size_t>(cause_code - 1)].size();
  return total;
}

RiskIndex build_risk_index(const Dataset& ds) {
  RiskIndex index;
  index.num_causes = ds.num_causes;
  index.strata.resize(static_cast<std::size_t>(ds.num_strata()));
  for (std::size_t i = 0; i < ds.n(); ++i) {
    index.strata[static_cast<std::size_t>(ds.stratum[i])].order.push_back(i);
  }
  for (auto& s : index.strata) {
    std::stable_sort(s.order.begin(), s.order.end(),
                     [&](std::size_t a, std::size_t b) { return ds.time[a] > ds.time[b]; });
    s.sorted_time.reserve(s.order.size());
    for (std::size_t row : s.order) s.sorted_time.push_back(ds.time[row]);
    s.failures.assign(static_cast<std::size_t>(ds.num_causes), {});

    // Walk ascending in time: position pos runs from the back of the order.
    for (std::size_t k = s.order.size(); k-- > 0;) {
      const std::size_t row = s.order[k];
      const int c = ds.cause[row];
      if (c == 0) continue;
      auto& groups = s.failures[static_cast<std::size_t>(c - 1)];
      const double t = ds.time[row];
      if (groups.empty() || groups.back().time != t) {
        FailureGroup g;
        g.time = t;
        // Count of subjects with time >= t (sorted descending).
        g.at_risk = static_cast<std::size_t>(
            std::upper_bound(s.sorted_time.begin(), s.sorted_time.end(), t, std::greater<>()) -
            s.sorted_time.begin());
        groups.push_back(std::move(g));
      }
      groups.back().event_positions.push_back(k);
    }
    for (auto& groups : s.failures) {
      for (auto& g : groups) std::sort(g.event_positions.begin(), g.event_positions.end());
    }
  }
  return index;
}

}  // namespace bvcox
