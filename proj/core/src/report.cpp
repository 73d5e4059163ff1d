#include "tseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "tseg/error.hpp"

namespace tseg {
namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string quote(const std::string& v) {
  const bool plain = !v.empty() && v.find_first_of(" \t\n\r\"\\=") == std::string::npos;
  if (plain) return v;
  std::string out = "\"";
  for (char c : v) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

struct Fields {
  std::string kind;
  std::map<std::string, std::string> values;
};

Fields tokenize(const std::string& line, const std::string& where) {
  Fields f;
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  };
  skip_ws();
  while (i < line.size() && line[i] != ' ' && line[i] != '\t') f.kind += line[i++];
  while (true) {
    skip_ws();
    if (i >= line.size()) break;
    std::string key;
    while (i < line.size() && line[i] != '=' && line[i] != ' ') key += line[i++];
    if (i >= line.size() || line[i] != '=') throw ParseError(where + ": expected key=value near '" + key + "'");
    ++i;
    std::string value;
    if (i < line.size() && line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < line.size()) {
        char c = line[i++];
        if (c == '"') {
          closed = true;
          break;
        }
        if (c == '\\') {
          if (i >= line.size()) break;
          const char e = line[i++];
          c = e == 'n' ? '\n' : e == 'r' ? '\r' : e == 't' ? '\t' : e;
        }
        value += c;
      }
      if (!closed) throw ParseError(where + ": unterminated quoted value for '" + key + "'");
    } else {
      while (i < line.size() && line[i] != ' ' && line[i] != '\t') value += line[i++];
    }
    f.values[key] = value;
  }
  return f;
}

const std::string& need(const Fields& f, const std::string& key, const std::string& where) {
  auto it = f.values.find(key);
  if (it == f.values.end()) throw ParseError(where + ": missing field '" + key + "'");
  return it->second;
}

double to_double(const std::string& s, const std::string& key, const std::string& where) {
  if (s == "nan") return std::nan("");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ParseError(where + ": field '" + key + "' is not a number: " + s);
  return v;
}

std::uint64_t to_u64(const std::string& s, const std::string& key, const std::string& where, int base = 10) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, base);
  if (s.empty() || *end != '\0') throw ParseError(where + ": field '" + key + "' is not an integer: " + s);
  return v;
}

bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string fmt_fixed(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

bool operator==(const TransferRecord& a, const TransferRecord& b) {
  return a.experiment == b.experiment && a.source == b.source && a.attack == b.attack &&
         a.config_hash == b.config_hash && a.target == b.target && a.seed == b.seed &&
         same_double(a.clean_miou, b.clean_miou) && same_double(a.adv_miou, b.adv_miou) &&
         same_double(a.max_linf, b.max_linf) && a.in_range == b.in_range && a.status == b.status;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InputError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<std::string> TransferReport::attacks() const {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (std::find(out.begin(), out.end(), r.attack) == out.end()) out.push_back(r.attack);
  }
  return out;
}

std::vector<std::string> TransferReport::targets() const {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (std::find(out.begin(), out.end(), r.target) == out.end()) out.push_back(r.target);
  }
  return out;
}

std::vector<std::uint64_t> TransferReport::seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& r : records) {
    if (std::find(out.begin(), out.end(), r.seed) == out.end()) out.push_back(r.seed);
  }
  return out;
}

std::vector<double> TransferReport::adv_values(const std::string& attack, const std::string& target) const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.attack == attack && r.target == target && r.ok()) out.push_back(r.adv_miou);
  }
  return out;
}

std::optional<double> TransferReport::median_adv_miou(const std::string& attack, const std::string& target) const {
  auto v = adv_values(attack, target);
  if (v.empty()) return std::nullopt;
  return median(std::move(v));
}

std::optional<double> TransferReport::clean_miou(const std::string& target) const {
  for (const auto& r : records) {
    if (r.target == target) return r.clean_miou;
  }
  return std::nullopt;
}

void TransferReport::merge(const TransferReport& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
  traces.insert(traces.end(), other.traces.begin(), other.traces.end());
}

std::string report_to_text(const TransferReport& report) {
  std::ostringstream out;
  out << "tseg-report 1\n";
  out << "meta dataset=" << quote(report.dataset_id) << " created=" << quote(report.created)
      << " eval_samples=" << report.eval_samples << "\n";
  for (const auto& r : report.records) {
    char hash[20];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(r.config_hash));
    out << "record experiment=" << quote(r.experiment) << " source=" << quote(r.source)
        << " attack=" << quote(r.attack) << " config_hash=" << hash << " target=" << quote(r.target)
        << " seed=" << r.seed << " clean_miou=" << fmt_double(r.clean_miou)
        << " adv_miou=" << fmt_double(r.adv_miou) << " max_linf=" << fmt_double(r.max_linf)
        << " in_range=" << (r.in_range ? 1 : 0) << " status=" << quote(r.status) << "\n";
  }
  for (const auto& t : report.traces) {
    out << "trace attack=" << quote(t.attack) << " seed=" << t.seed << " iteration=" << t.iteration
        << " mean_loss=" << fmt_double(t.mean_loss) << " stage2_fraction=" << fmt_double(t.stage2_fraction)
        << " misclassified_fraction=" << fmt_double(t.misclassified_fraction)
        << " mean_kl=" << fmt_double(t.mean_kl) << "\n";
  }
  return out.str();
}

TransferReport parse_report(const std::string& text) {
  TransferReport report;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool header = false;
  std::size_t record_index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "tseg-report 1") throw ParseError("line " + std::to_string(line_no) + ": missing 'tseg-report 1' header");
      header = true;
      continue;
    }
    const std::string where_line = "line " + std::to_string(line_no);
    const Fields f = tokenize(line, where_line);
    if (f.kind == "meta") {
      report.dataset_id = need(f, "dataset", where_line);
      report.created = need(f, "created", where_line);
      report.eval_samples = static_cast<int>(to_u64(need(f, "eval_samples", where_line), "eval_samples", where_line));
    } else if (f.kind == "record") {
      const std::string where = where_line + " (record " + std::to_string(record_index) + ")";
      TransferRecord r;
      r.experiment = need(f, "experiment", where);
      r.source = need(f, "source", where);
      r.attack = need(f, "attack", where);
      r.config_hash = to_u64(need(f, "config_hash", where), "config_hash", where, 16);
      r.target = need(f, "target", where);
      r.seed = to_u64(need(f, "seed", where), "seed", where);
      r.clean_miou = to_double(need(f, "clean_miou", where), "clean_miou", where);
      r.adv_miou = to_double(need(f, "adv_miou", where), "adv_miou", where);
      r.max_linf = to_double(need(f, "max_linf", where), "max_linf", where);
      r.in_range = need(f, "in_range", where) == "1";
      r.status = need(f, "status", where);
      report.records.push_back(std::move(r));
      ++record_index;
    } else if (f.kind == "trace") {
      const std::string where = where_line + " (trace)";
      TraceRecord t;
      t.attack = need(f, "attack", where);
      t.seed = to_u64(need(f, "seed", where), "seed", where);
      t.iteration = static_cast<int>(to_u64(need(f, "iteration", where), "iteration", where));
      t.mean_loss = to_double(need(f, "mean_loss", where), "mean_loss", where);
      t.stage2_fraction = to_double(need(f, "stage2_fraction", where), "stage2_fraction", where);
      t.misclassified_fraction =
          to_double(need(f, "misclassified_fraction", where), "misclassified_fraction", where);
      t.mean_kl = to_double(need(f, "mean_kl", where), "mean_kl", where);
      report.traces.push_back(std::move(t));
    } else {
      throw ParseError(where_line + ": unknown line kind '" + f.kind + "'");
    }
  }
  if (!header) throw ParseError("empty report");
  return report;
}

void write_report(const std::filesystem::path& path, const TransferReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << report_to_text(report);
  if (!out) throw IoError("write failed for " + path.string());
}

TransferReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open report " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_report(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string report_to_csv(const TransferReport& report) {
  std::string out = "source,attack,target,seed,clean_miou,adv_miou,status\n";
  for (const auto& r : report.records) {
    out += csv_field(r.source) + "," + csv_field(r.attack) + "," + csv_field(r.target) + "," +
           std::to_string(r.seed) + "," + fmt_fixed(r.clean_miou) + "," + fmt_fixed(r.adv_miou) + "," +
           csv_field(r.status) + "\n";
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const TransferReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << report_to_csv(report);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace tseg
