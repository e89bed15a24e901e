#include "dpmface/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "dpmface/error.hpp"

namespace dpmface {

namespace {

constexpr const char* kHeader = "path,subject_id,modality,session,condition,enrollment_order,split";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::int64_t to_int(const std::string& s, const std::string& what, std::size_t line) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidInput("manifest line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
}

}  // namespace

Manifest Manifest::read(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest " + file.string());
  Manifest m;
  m.root = file.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty manifest " + file.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_fields(line);
  if (header.size() < 6 || header[0] != "path" || header[1] != "subject_id" || header[2] != "modality") {
    throw InvalidInput("manifest header must start with path,subject_id,modality,...");
  }
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      m.comments.push_back(line.substr(line.rfind("# ", 0) == 0 ? 2 : 1));
      continue;
    }
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != header.size()) {
      throw InvalidInput("manifest line " + std::to_string(line_no) + ": expected " +
                         std::to_string(header.size()) + " fields");
    }
    ImageRecord r;
    r.path = f[0];
    r.subject_id = to_int(f[1], "subject_id", line_no);
    r.modality = modality_from_string(f[2]);
    if (r.modality == Modality::mapped_source) throw InvalidInput("manifest cannot list mapped images");
    r.session = static_cast<int>(to_int(f[3], "session", line_no));
    r.condition = f[4];
    r.enrollment_order = static_cast<int>(to_int(f[5], "enrollment_order", line_no));
    if (f.size() > 6) r.split = f[6];
    if (!seen.insert(r.path).second) throw InvalidInput("duplicate manifest path " + r.path);
    m.records.push_back(std::move(r));
  }
  return m;
}

void Manifest::write(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write manifest " + file.string());
  out << kHeader << '\n';
  for (const auto& c : comments) out << "# " << c << '\n';
  for (const auto& r : records) {
    out << r.path << ',' << r.subject_id << ',' << to_string(r.modality) << ',' << r.session << ','
        << r.condition << ',' << r.enrollment_order << ',' << r.split << '\n';
  }
  if (!out) throw IoError("write failed for " + file.string());
}

std::vector<std::int64_t> parse_id_list(const std::string& spec) {
  auto id = [&](const std::string& s) {
    try {
      return to_int(s, "subject id", 0);
    } catch (const InvalidInput&) {
      throw InvalidParameter("bad subject id '" + s + "' in list '" + spec + "'");
    }
  };
  std::vector<std::int64_t> ids;
  std::istringstream in(spec);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.empty()) continue;
    const auto dash = part.find('-', 1);
    if (dash == std::string::npos) {
      ids.push_back(id(part));
    } else {
      const std::int64_t lo = id(part.substr(0, dash));
      const std::int64_t hi = id(part.substr(dash + 1));
      if (hi < lo) throw InvalidParameter("descending id range '" + part + "'");
      for (std::int64_t v = lo; v <= hi; ++v) ids.push_back(v);
    }
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

}  // namespace dpmface
