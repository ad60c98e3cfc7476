#include "s2v/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "s2v/errors.hpp"
#include "s2v/s2vt.hpp"
#include "s2v/strings.hpp"

namespace s2v::data {

namespace fs = std::filesystem;

std::size_t DatasetManifest::pair_count() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.files.size();
  return n;
}

std::vector<std::string> DatasetManifest::subject_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : subjects) ids.push_back(s.id);
  return ids;
}

const SubjectEntry& DatasetManifest::subject(const std::string& id) const {
  for (const auto& s : subjects) {
    if (s.id == id) return s;
  }
  throw DataError("manifest '" + name + "' has no subject '" + id + "'");
}

fs::path DatasetManifest::resolve(const fs::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir,
                               const std::string& origin) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_fs = false, have_tr = false, have_geometry = false;
  auto fail = [&](const std::string& why) {
    throw DataError(origin + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = strings::trim(strings::strip_comment(line));
    if (line.empty()) continue;
    if (line.rfind("subject ", 0) == 0) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) fail("subject line needs 'subject <id>: <a> <b>'");
      const std::string id = strings::trim(line.substr(8, colon - 8));
      const auto paths = strings::split_ws(line.substr(colon + 1));
      if (id.empty() || paths.size() != 2) fail("subject line needs an id and two paths");
      auto it = std::find_if(m.subjects.begin(), m.subjects.end(),
                             [&](const SubjectEntry& s) { return s.id == id; });
      if (it == m.subjects.end()) {
        m.subjects.push_back({id, {}});
        it = std::prev(m.subjects.end());
      }
      it->files.push_back({paths[0], paths[1]});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value' or a subject line");
    const std::string key = strings::trim(line.substr(0, eq));
    const std::string value = strings::trim(line.substr(eq + 1));
    try {
      if (key == "name") {
        m.name = value;
      } else if (key == "kind") {
        if (value == "paired") m.kind = ManifestKind::kPaired;
        else if (value == "raw") m.kind = ManifestKind::kRaw;
        else fail("kind must be 'paired' or 'raw'");
      } else if (key == "fs") {
        m.fs_hz = strings::parse_double(value);
        have_fs = true;
      } else if (key == "tr") {
        m.tr_s = strings::parse_double(value);
        have_tr = true;
      } else if (key == "geometry") {
        const auto v = strings::parse_sizes(value);
        if (v.size() != 6) fail("geometry needs six extents: C T F D H W");
        m.geometry = {v[0], v[1], v[2], v[3], v[4], v[5]};
        have_geometry = true;
      } else if (key == "volume_target") {
        const auto v = strings::parse_sizes(value);
        if (v.size() != 3) fail("volume_target needs three extents: D H W");
        m.volume_target = std::array<std::size_t, 3>{v[0], v[1], v[2]};
      } else {
        fail("unknown manifest key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      fail(e.what());
    }
  }
  if (!have_fs || !have_tr) throw DataError(origin + ": manifest must declare fs and tr");
  if (m.kind == ManifestKind::kPaired && !have_geometry) {
    throw DataError(origin + ": paired manifest must declare geometry");
  }
  return m;
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_manifest(ss.str(), path.parent_path(), path.string());
}

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  os << "name = " << m.name << '\n';
  os << "kind = " << (m.kind == ManifestKind::kRaw ? "raw" : "paired") << '\n';
  os << "fs = " << strings::format_double(m.fs_hz) << '\n';
  os << "tr = " << strings::format_double(m.tr_s) << '\n';
  if (m.kind == ManifestKind::kPaired) {
    const auto& g = m.geometry;
    os << "geometry = " << g.channels << ' ' << g.time << ' ' << g.freq << ' ' << g.depth << ' '
       << g.height << ' ' << g.width << '\n';
  }
  if (m.volume_target) {
    const auto& t = *m.volume_target;
    os << "volume_target = " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  }
  for (const auto& s : m.subjects) {
    for (const auto& f : s.files) {
      os << "subject " << s.id << ": " << f.first.generic_string() << ' '
         << f.second.generic_string() << '\n';
    }
  }
  return os.str();
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write manifest " + path.string());
  f << format_manifest(m);
}

void validate_manifest(const DatasetManifest& m) {
  if (m.subjects.empty()) throw DataError("manifest '" + m.name + "' lists no subjects");
  const auto& g = m.geometry;
  for (const auto& s : m.subjects) {
    for (const auto& f : s.files) {
      for (const auto& p : {f.first, f.second}) {
        if (!fs::exists(m.resolve(p))) {
          throw DataError("subject '" + s.id + "': missing file " + m.resolve(p).string());
        }
      }
      if (m.kind != ManifestKind::kPaired) continue;
      const auto x = io::read_s2vt(m.resolve(f.first));
      const auto y = io::read_s2vt(m.resolve(f.second));
      if (x.shape() != Shape{g.channels, g.time, g.freq}) {
        throw DataError(m.resolve(f.first).string() + ": shape " + shape_str(x.shape()) +
                        " does not match declared geometry " + g.str());
      }
      if (y.shape() != Shape{g.depth, g.height, g.width}) {
        throw DataError(m.resolve(f.second).string() + ": shape " + shape_str(y.shape()) +
                        " does not match declared geometry " + g.str());
      }
    }
  }
}

std::vector<Sample> load_samples(const DatasetManifest& m,
                                 const std::vector<std::string>& subject_ids) {
  if (m.kind != ManifestKind::kPaired) {
    throw ConfigError("manifest '" + m.name + "' holds raw recordings; run preprocess first");
  }
  const auto& g = m.geometry;
  std::vector<Sample> out;
  for (const auto& id : subject_ids) {
    for (const auto& f : m.subject(id).files) {
      Sample s{io::read_s2vt(m.resolve(f.first)), io::read_s2vt(m.resolve(f.second)), id};
      if (s.input.shape() != Shape{g.channels, g.time, g.freq} ||
          s.target.shape() != Shape{g.depth, g.height, g.width}) {
        throw DataError("subject '" + id + "': pair " + f.first.string() +
                        " does not match declared geometry " + g.str());
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace s2v::data
