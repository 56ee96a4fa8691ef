#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "stormbg/io.hpp"

namespace stormbg {

namespace {

std::string sig6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string unquote(std::string_view field) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
  if (field.size() >= 2 && field.front() == '"' && field.back() == '"') field = field.substr(1, field.size() - 2);
  return std::string(field);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i < line.size() && line[i] == '"') quoted = !quoted;
    if (i == line.size() || (line[i] == ',' && !quoted)) {
      fields.push_back(unquote(std::string_view(line).substr(start, i - start)));
      start = i + 1;
    }
  }
  return fields;
}

double number(const std::string& field, std::size_t line, const char* column) {
  double v = 0.0;
  const char* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    throw DataError("line " + std::to_string(line) + ": column " + column + " is not a number: '" + field + "'");
  return v;
}

std::size_t counter(const std::string& field, std::size_t line, const char* column) {
  const double v = number(field, line, column);
  if (v < 1.0 || v != std::floor(v) || v > 9.0e15)
    throw DataError("line " + std::to_string(line) + ": column " + column + " must be a positive integer, got '" +
                    field + "'");
  return static_cast<std::size_t>(v);
}

bool blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

}  // namespace

std::string format_locs_csv(const LocalizationTable& table) {
  const double px = table.pixel_size_nm;
  std::string out(kLocsHeader);
  out += '\n';
  std::size_t id = 1;
  for (const Localization& l : table.rows) {
    out += std::to_string(id++) + ',' + std::to_string(l.frame + 1) + ',' + sig6(l.x * px) + ',' + sig6(l.y * px) +
           ',' + sig6(l.sigma * px) + ',' + sig6(l.intensity) + '\n';
  }
  return out;
}

LocalizationTable parse_locs_csv(std::istream& in, double pixel_size_nm) {
  if (!(pixel_size_nm > 0.0)) throw std::invalid_argument("pixel size must be positive");
  LocalizationTable table;
  table.pixel_size_nm = pixel_size_nm;
  std::string line;
  if (!std::getline(in, line)) throw DataError("line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kLocsHeader) throw DataError("line 1: unexpected header '" + line + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto f = split(line);
    if (f.size() != 6)
      throw DataError("line " + std::to_string(lineno) + ": expected 6 fields, got " + std::to_string(f.size()));
    counter(f[0], lineno, "id");
    Localization l;
    l.frame = counter(f[1], lineno, "frame") - 1;
    l.x = number(f[2], lineno, "x [nm]") / pixel_size_nm;
    l.y = number(f[3], lineno, "y [nm]") / pixel_size_nm;
    l.sigma = number(f[4], lineno, "sigma [nm]") / pixel_size_nm;
    l.intensity = number(f[5], lineno, "intensity [photon]");
    if (!table.rows.empty() && l.frame < table.rows.back().frame)
      throw DataError("line " + std::to_string(lineno) + ": rows are not ordered by frame");
    table.rows.push_back(l);
  }
  return table;
}

void write_locs_csv(const LocalizationTable& table, const std::filesystem::path& path) {
  write_file_atomic(path, format_locs_csv(table));
}

LocalizationTable read_locs_csv(const std::filesystem::path& path, double pixel_size_nm) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    LocalizationTable table = parse_locs_csv(in, pixel_size_nm);
    table.stack_id = path.stem().string();
    return table;
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_ground_truth_csv(const GroundTruth& truth) {
  std::string out = R"("frame","emitter","x [px]","y [px]")";
  out += '\n';
  const std::size_t ne = truth.emitters.size();
  const std::size_t frames = ne ? truth.on.size() / ne : 0;
  char buf[64];
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t e = 0; e < ne; ++e) {
      if (!truth.active(f, e)) continue;
      std::snprintf(buf, sizeof buf, "%.10g,%.10g", truth.emitters[e].x, truth.emitters[e].y);
      out += std::to_string(f + 1) + ',' + std::to_string(e + 1) + ',' + buf + '\n';
    }
  return out;
}

GroundTruth parse_ground_truth_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != R"("frame","emitter","x [px]","y [px]")") throw DataError("line 1: unexpected header '" + line + "'");
  struct Row {
    std::size_t frame, emitter;
    double x, y;
  };
  std::vector<Row> rows;
  std::size_t frames = 0, emitters = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const auto f = split(line);
    if (f.size() != 4)
      throw DataError("line " + std::to_string(lineno) + ": expected 4 fields, got " + std::to_string(f.size()));
    Row r{counter(f[0], lineno, "frame") - 1, counter(f[1], lineno, "emitter") - 1, number(f[2], lineno, "x [px]"),
          number(f[3], lineno, "y [px]")};
    frames = std::max(frames, r.frame + 1);
    emitters = std::max(emitters, r.emitter + 1);
    rows.push_back(r);
  }
  if (frames > 0 && emitters > (std::size_t{1} << 31) / frames) throw DataError("ground truth table too large");
  GroundTruth truth;
  truth.emitters.resize(emitters);
  truth.on.assign(frames * emitters, 0);
  std::vector<bool> placed(emitters, false);
  for (const Row& r : rows) {
    auto& pos = truth.emitters[r.emitter];
    if (placed[r.emitter] && (pos.x != r.x || pos.y != r.y))
      throw DataError("emitter " + std::to_string(r.emitter + 1) + " has inconsistent positions");
    pos = {r.x, r.y};
    placed[r.emitter] = true;
    truth.on[r.frame * emitters + r.emitter] = 1;
  }
  return truth;
}

void write_ground_truth_csv(const GroundTruth& truth, const std::filesystem::path& path) {
  write_file_atomic(path, format_ground_truth_csv(truth));
}

GroundTruth read_ground_truth_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return parse_ground_truth_csv(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header.size()) throw std::invalid_argument("csv row width does not match the header");
  rows.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? ",\"" : "\"") + header[i] + '"';
  out += '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += '\n';
  }
  return out;
}

void write_csv(const CsvTable& table, const std::filesystem::path& path) { write_file_atomic(path, table.str()); }

std::string format_number(double value) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

}  // namespace stormbg
