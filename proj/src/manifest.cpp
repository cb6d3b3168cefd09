#include "tsn/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace tsn {

namespace {

constexpr std::string_view kHeader = "video_id,participant_id,trial_index,task,label,path";

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// RFC 4180 rows; quoted fields may contain commas, quotes and newlines.
std::vector<std::vector<std::string>> parse_rows(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw std::runtime_error("manifest: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

int parse_int(const std::string& s, const char* column, std::size_t line) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw std::runtime_error("manifest line " + std::to_string(line) + ": " + column + " '" + s + "' is not an integer");
  }
  return v;
}

}  // namespace

std::string_view skill_name(int label) {
  switch (label) {
    case kNovice: return "novice";
    case kIntermediate: return "intermediate";
    case kExpert: return "expert";
    default: return "unknown";
  }
}

void Manifest::validate() const {
  std::set<std::string> ids;
  std::set<std::tuple<std::string, int, std::string>> keys;
  for (const VideoRecord& r : records) {
    if (r.video_id.empty()) throw std::invalid_argument("manifest: empty video_id");
    if (!ids.insert(r.video_id).second) throw std::invalid_argument("manifest: duplicate video_id " + r.video_id);
    if (r.trial_index < 1) throw std::invalid_argument("manifest: " + r.video_id + " has trial_index < 1");
    if (r.label < 0 || r.label >= kNumClasses) {
      throw std::invalid_argument("manifest: " + r.video_id + " has label " + std::to_string(r.label) + " outside {0,1,2}");
    }
    if (!keys.insert({r.participant_id, r.trial_index, r.task}).second) {
      throw std::invalid_argument("manifest: duplicate (participant, trial, task) for " + r.video_id);
    }
  }
}

const VideoRecord& Manifest::find(std::string_view video_id) const {
  for (const VideoRecord& r : records)
    if (r.video_id == video_id) return r;
  throw std::out_of_range("manifest: unknown video_id " + std::string(video_id));
}

std::filesystem::path Manifest::resolve(const VideoRecord& record) const {
  const std::filesystem::path p(record.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::string manifest_to_csv(const Manifest& manifest) {
  std::ostringstream os;
  os << kHeader << '\n';
  for (const VideoRecord& r : manifest.records) {
    os << csv_field(r.video_id) << ',' << csv_field(r.participant_id) << ',' << r.trial_index << ','
       << csv_field(r.task) << ',' << r.label << ',' << csv_field(r.path) << '\n';
  }
  return os.str();
}

Manifest manifest_from_csv(std::string_view text, std::filesystem::path base_dir) {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  const auto rows = parse_rows(text);
  if (rows.empty()) throw std::runtime_error("manifest: empty file");
  std::string header;
  for (std::size_t i = 0; i < rows[0].size(); ++i) header += (i ? "," : "") + rows[0][i];
  if (header != kHeader) throw std::runtime_error("manifest: header must be '" + std::string(kHeader) + "'");
  Manifest m;
  m.base_dir = std::move(base_dir);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != 6) {
      throw std::runtime_error("manifest line " + std::to_string(i + 1) + ": expected 6 fields, got " +
                               std::to_string(row.size()));
    }
    VideoRecord r;
    r.video_id = row[0];
    r.participant_id = row[1];
    r.trial_index = parse_int(row[2], "trial_index", i + 1);
    r.task = row[3];
    r.label = parse_int(row[4], "label", i + 1);
    r.path = row[5];
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  os << manifest_to_csv(manifest);
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open manifest");
  std::ostringstream ss;
  ss << is.rdbuf();
  return manifest_from_csv(ss.str(), path.parent_path());
}

}  // namespace tsn
