#include "pcadv/io.hpp"

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string_view>

#include "json.hpp"

namespace pcadv::io {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct LineIn {
  std::ifstream f;
  std::string path;
  long line_no = 0;

  explicit LineIn(const fs::path& p) : f(p, std::ios::binary), path(p.string()) {
    if (!f) throw ParseError(path, 0, "cannot open file");
  }
  bool raw(std::string& out) {
    if (!std::getline(f, out)) return false;
    ++line_no;
    if (!out.empty() && out.back() == '\r') out.pop_back();
    return true;
  }
  // next non-empty line with '#' comments stripped (OFF convention)
  bool content(std::string& out) {
    while (raw(out)) {
      size_t h = out.find('#');
      if (h != std::string::npos) out.erase(h);
      out = trim(out);
      if (!out.empty()) return true;
    }
    return false;
  }
};

}  // namespace

// ----------------------------------------------------------------------- OFF

geom::PointCloud read_off(const fs::path& path) {
  LineIn in(path);
  std::string line;
  if (!in.content(line)) throw ParseError(in.path, in.line_no, "empty OFF file");
  if (line.rfind("OFF", 0) != 0) throw ParseError(in.path, in.line_no, "missing OFF header");

  std::string counts = trim(line.substr(3));  // ModelNet fuses counts onto the header
  if (counts.empty() && !in.content(counts))
    throw ParseError(in.path, in.line_no, "missing vertex/face counts");

  long long nv = 0, nf = 0, ne = 0;
  {
    std::istringstream ss(counts);
    if (!(ss >> nv >> nf)) throw ParseError(in.path, in.line_no, "malformed count line");
    ss >> ne;  // edge count is optional
    if (nv < 0 || nf < 0) throw ParseError(in.path, in.line_no, "negative element count");
  }
  if (nv == 0) throw ParseError(in.path, in.line_no, "OFF file declares zero vertices");

  geom::PointCloud cloud;
  cloud.points.reserve(static_cast<size_t>(nv));
  for (long long i = 0; i < nv; ++i) {
    if (!in.content(line))
      throw ParseError(in.path, in.line_no,
                       "truncated: expected " + std::to_string(nv) + " vertices, got " +
                           std::to_string(i));
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z)) throw ParseError(in.path, in.line_no, "malformed vertex line");
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
      throw ParseError(in.path, in.line_no, "non-finite vertex");
    cloud.points.push_back({x, y, z});
  }
  return cloud;  // faces ignored
}

// ----------------------------------------------------------------------- PLY

namespace {

struct PlyProp {
  std::string name;
  std::string type;        // scalar type (item type for lists)
  bool list = false;
  std::string count_type;  // lists only
};

struct PlyElem {
  std::string name;
  size_t count = 0;
  std::vector<PlyProp> props;
};

size_t scalar_size(const std::string& t, const std::string& path, long line) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw ParseError(path, line, "unknown property type '" + t + "'");
}

bool is_float_type(const std::string& t) {
  return t == "float" || t == "float32" || t == "double" || t == "float64";
}
bool is_uchar_type(const std::string& t) { return t == "uchar" || t == "uint8"; }

double decode_scalar(const char* buf, const std::string& t) {
  auto as = [&](auto v) {
    std::memcpy(&v, buf, sizeof v);
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return as(int8_t{});
  if (t == "uchar" || t == "uint8") return as(uint8_t{});
  if (t == "short" || t == "int16") return as(int16_t{});
  if (t == "ushort" || t == "uint16") return as(uint16_t{});
  if (t == "int" || t == "int32") return as(int32_t{});
  if (t == "uint" || t == "uint32") return as(uint32_t{});
  if (t == "float" || t == "float32") return as(float{});
  return as(double{});  // double / float64
}

struct PlyBody {  // sequential reader over the data section
  LineIn& in;
  bool binary;
  long header_line;  // reported for body errors

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(in.path, header_line, what);
  }
  double ascii_number() {
    std::string tok;
    if (!(in.f >> tok)) fail("truncated data section");
    try {
      size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) fail("malformed number '" + tok + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("malformed number '" + tok + "'");
    }
  }
  double binary_scalar(const std::string& type) {
    char buf[8];
    size_t n = scalar_size(type, in.path, header_line);
    if (!in.f.read(buf, static_cast<std::streamsize>(n))) fail("truncated data section");
    return decode_scalar(buf, type);
  }
  double value(const std::string& type) { return binary ? binary_scalar(type) : ascii_number(); }
  void skip_prop(const PlyProp& p) {
    if (!p.list) {
      value(p.type);
      return;
    }
    double cnt = value(p.count_type);
    if (cnt < 0 || cnt > 1e9) fail("implausible list length");
    if (binary) {
      size_t item = scalar_size(p.type, in.path, header_line);
      if (!in.f.ignore(static_cast<std::streamsize>(item * static_cast<size_t>(cnt))))
        fail("truncated data section");
    } else {
      for (long i = 0; i < static_cast<long>(cnt); ++i) ascii_number();
    }
  }
};

}  // namespace

geom::PointCloud read_ply(const fs::path& path) {
  LineIn in(path);
  std::string line;
  if (!in.raw(line) || trim(line) != "ply") throw ParseError(in.path, 1, "not a PLY file");

  bool binary = false, have_format = false;
  std::vector<PlyElem> elems;
  long header_end = 0;
  while (true) {
    if (!in.raw(line)) throw ParseError(in.path, in.line_no, "unterminated PLY header");
    std::string l = trim(line);
    if (l.empty()) continue;
    std::istringstream ss(l);
    std::string kw;
    ss >> kw;
    if (kw == "comment" || kw == "obj_info") continue;
    if (kw == "format") {
      std::string f, ver;
      ss >> f >> ver;
      if (f == "ascii") binary = false;
      else if (f == "binary_little_endian") binary = true;
      else throw ParseError(in.path, in.line_no, "unsupported PLY format '" + f + "'");
      have_format = true;
    } else if (kw == "element") {
      PlyElem e;
      long long cnt = -1;
      if (!(ss >> e.name >> cnt) || cnt < 0)
        throw ParseError(in.path, in.line_no, "malformed element line");
      e.count = static_cast<size_t>(cnt);
      elems.push_back(std::move(e));
    } else if (kw == "property") {
      if (elems.empty()) throw ParseError(in.path, in.line_no, "property before any element");
      PlyProp p;
      std::string t;
      if (!(ss >> t)) throw ParseError(in.path, in.line_no, "malformed property line");
      if (t == "list") {
        p.list = true;
        if (!(ss >> p.count_type >> p.type >> p.name))
          throw ParseError(in.path, in.line_no, "malformed list property");
        scalar_size(p.count_type, in.path, in.line_no);
      } else {
        p.type = t;
        if (!(ss >> p.name)) throw ParseError(in.path, in.line_no, "malformed property line");
      }
      scalar_size(p.type, in.path, in.line_no);
      elems.back().props.push_back(std::move(p));
    } else if (kw == "end_header") {
      header_end = in.line_no;
      break;
    } else {
      throw ParseError(in.path, in.line_no, "unknown header keyword '" + kw + "'");
    }
  }
  if (!have_format) throw ParseError(in.path, header_end, "missing format line");

  PlyBody body{in, binary, header_end};
  geom::PointCloud cloud;
  bool seen_vertex = false;
  for (const PlyElem& e : elems) {
    if (e.name != "vertex") {  // elements must be consumed in declared order
      for (size_t r = 0; r < e.count; ++r)
        for (const PlyProp& p : e.props) body.skip_prop(p);
      continue;
    }
    seen_vertex = true;
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    for (size_t i = 0; i < e.props.size(); ++i) {
      const PlyProp& p = e.props[i];
      if (p.list) continue;
      auto coord = [&](int& slot) {
        if (!is_float_type(p.type))
          throw ParseError(in.path, header_end, "coordinate '" + p.name + "' must be float or double");
        slot = static_cast<int>(i);
      };
      auto color = [&](int& slot) {
        if (!is_uchar_type(p.type))
          throw ParseError(in.path, header_end, "color '" + p.name + "' must be uchar");
        slot = static_cast<int>(i);
      };
      if (p.name == "x") coord(ix);
      else if (p.name == "y") coord(iy);
      else if (p.name == "z") coord(iz);
      else if (p.name == "red") color(ir);
      else if (p.name == "green") color(ig);
      else if (p.name == "blue") color(ib);
    }
    if (ix < 0 || iy < 0 || iz < 0)
      throw ParseError(in.path, header_end, "vertex element lacks x/y/z");
    int ncolor = (ir >= 0) + (ig >= 0) + (ib >= 0);
    if (ncolor != 0 && ncolor != 3)
      throw ParseError(in.path, header_end, "incomplete red/green/blue properties");
    if (e.count == 0) throw ParseError(in.path, header_end, "vertex element is empty");

    cloud.points.reserve(e.count);
    if (ncolor == 3) cloud.colors.reserve(e.count);
    std::vector<double> row(e.props.size());
    for (size_t r = 0; r < e.count; ++r) {
      for (size_t i = 0; i < e.props.size(); ++i) {
        const PlyProp& p = e.props[i];
        if (p.list) {
          body.skip_prop(p);
          row[i] = 0;
        } else {
          row[i] = body.value(p.type);
        }
      }
      Vec3 pt{row[static_cast<size_t>(ix)], row[static_cast<size_t>(iy)],
              row[static_cast<size_t>(iz)]};
      if (!finite(pt)) throw ParseError(in.path, header_end, "non-finite vertex");
      cloud.points.push_back(pt);
      if (ncolor == 3)
        cloud.colors.push_back({row[static_cast<size_t>(ir)] / 255.0,
                                row[static_cast<size_t>(ig)] / 255.0,
                                row[static_cast<size_t>(ib)] / 255.0});
    }
  }
  if (!seen_vertex) throw ParseError(in.path, header_end, "no vertex element");
  return cloud;
}

void write_ply(const geom::PointCloud& cloud, const fs::path& path, bool binary) {
  cloud.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  const bool colors = !cloud.colors.empty();

  out << "ply\n" << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n");
  out << "element vertex " << cloud.size() << "\n";
  const char* ct = binary ? "float" : "double";
  out << "property " << ct << " x\nproperty " << ct << " y\nproperty " << ct << " z\n";
  if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";

  auto q = [](double c) {
    return static_cast<unsigned char>(std::clamp<long>(std::lround(c * 255.0), 0, 255));
  };
  if (binary) {
    for (size_t i = 0; i < cloud.size(); ++i) {
      const Vec3& p = cloud.points[i];
      float xyz[3] = {static_cast<float>(p.x), static_cast<float>(p.y),
                      static_cast<float>(p.z)};
      out.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
      if (colors) {
        const Vec3& c = cloud.colors[i];
        unsigned char rgb[3] = {q(c.x), q(c.y), q(c.z)};
        out.write(reinterpret_cast<const char*>(rgb), sizeof rgb);
      }
    }
  } else {
    char buf[192];
    for (size_t i = 0; i < cloud.size(); ++i) {
      const Vec3& p = cloud.points[i];
      int n = std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g", p.x, p.y, p.z);
      if (colors) {
        const Vec3& c = cloud.colors[i];
        n += std::snprintf(buf + n, sizeof buf - static_cast<size_t>(n), " %u %u %u", q(c.x),
                           q(c.y), q(c.z));
      }
      buf[n++] = '\n';
      out.write(buf, n);
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

geom::PointCloud ingest_cloud(geom::PointCloud cloud, int target_points) {
  cloud.validate();
  if (target_points < 4) throw std::invalid_argument("ingest: target point count must be >= 4");
  if (cloud.size() > static_cast<size_t>(target_points)) {
    std::vector<int32_t> idx = geom::farthest_point_sample(cloud, target_points, 0);
    std::sort(idx.begin(), idx.end());  // keep original relative order
    geom::PointCloud sub;
    sub.label = cloud.label;
    sub.points.reserve(idx.size());
    if (!cloud.colors.empty()) sub.colors.reserve(idx.size());
    for (int32_t i : idx) {
      sub.points.push_back(cloud.points[static_cast<size_t>(i)]);
      if (!cloud.colors.empty()) sub.colors.push_back(cloud.colors[static_cast<size_t>(i)]);
    }
    cloud = std::move(sub);
  }
  return geom::normalized_unit_sphere(std::move(cloud));
}

// -------------------------------------------------------------------- corpus

namespace {

void check_cloud_id(const std::string& id, const std::string& path, long line) {
  if (id.empty()) throw ParseError(path, line, "empty cloud id");
  for (char c : id)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
      throw ParseError(path, line, "cloud id contains unsafe character: '" + id + "'");
}

}  // namespace

void write_corpus(const corpus::Corpus& corpus, const fs::path& dir) {
  if (corpus.clouds.empty()) throw std::invalid_argument("write_corpus: empty corpus");
  fs::create_directories(dir / "clouds");

  ojson meta;
  meta["format"] = "pcadv-corpus-v1";
  meta["count"] = corpus.clouds.size();
  std::vector<std::string> cats;
  for (const corpus::LabeledCloud& lc : corpus.clouds) {
    std::string w = corpus::category_word(static_cast<corpus::Category>(lc.category));
    if (std::find(cats.begin(), cats.end(), w) == cats.end()) cats.push_back(w);
  }
  meta["categories"] = cats;

  std::ofstream mj(dir / "corpus.json", std::ios::binary);
  if (!mj) throw std::runtime_error("cannot open for writing: " + (dir / "corpus.json").string());
  mj << meta.dump(2) << "\n";

  std::ofstream cap(dir / "captions.jsonl", std::ios::binary);
  if (!cap)
    throw std::runtime_error("cannot open for writing: " + (dir / "captions.jsonl").string());
  for (const corpus::LabeledCloud& lc : corpus.clouds) {
    ojson row;
    row["id"] = lc.id;
    row["category"] = corpus::category_word(static_cast<corpus::Category>(lc.category));
    row["caption"] = victim::caption_to_string(corpus.vocab, lc.caption);
    cap << row.dump() << "\n";
    write_ply(lc.cloud, dir / "clouds" / (lc.id + ".ply"));
  }
  if (!cap) throw std::runtime_error("write failed: " + (dir / "captions.jsonl").string());
}

corpus::Corpus read_corpus(const fs::path& dir) {
  const fs::path meta_path = dir / "corpus.json";
  std::ifstream mj(meta_path, std::ios::binary);
  if (!mj) throw ParseError(meta_path.string(), 0, "cannot open file");
  json meta;
  try {
    meta = json::parse(mj);
  } catch (const std::exception& e) {
    throw ParseError(meta_path.string(), 0, e.what());
  }
  size_t count = 0;
  try {
    if (meta.at("format") != "pcadv-corpus-v1")
      throw ParseError(meta_path.string(), 0, "unsupported corpus format");
    count = meta.at("count").get<size_t>();
  } catch (const json::exception& e) {
    throw ParseError(meta_path.string(), 0, e.what());
  }

  corpus::Corpus out;
  out.vocab = victim::Vocabulary::standard();
  LineIn cap(dir / "captions.jsonl");
  std::string line;
  while (cap.raw(line)) {
    if (trim(line).empty()) continue;
    corpus::LabeledCloud lc;
    try {
      json row = json::parse(line);
      lc.id = row.at("id").get<std::string>();
      check_cloud_id(lc.id, cap.path, cap.line_no);
      lc.category = static_cast<int>(
          corpus::category_from_word(row.at("category").get<std::string>()));
      lc.caption = victim::caption_from_string(out.vocab, row.at("caption").get<std::string>());
      lc.caption.validate(out.vocab, true);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(cap.path, cap.line_no, e.what());
    }
    lc.cloud = read_ply(dir / "clouds" / (lc.id + ".ply"));
    lc.cloud.label = lc.category;
    lc.cloud.validate();
    out.clouds.push_back(std::move(lc));
  }
  if (out.clouds.size() != count)
    throw ParseError(meta_path.string(), 0,
                     "cloud count mismatch: corpus.json says " + std::to_string(count) +
                         ", captions.jsonl has " + std::to_string(out.clouds.size()));
  return out;
}

// ------------------------------------------------------------------- records

namespace {

// non-finite doubles are not representable in JSON; round-trip them as null
ojson jnum(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }
double dnum(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

ojson record_to_json(const eval::EvalRecord& r) {
  ojson j;
  j["cloud_id"] = r.cloud_id;
  j["family"] = to_string(r.family);
  j["setting"] = to_string(r.setting);
  j["clean_caption"] = r.clean_caption;
  j["adv_caption"] = r.adv_caption;
  j["reference_caption"] = r.reference_caption;
  j["gt_category"] = r.gt_category;
  j["target_category"] = r.target_category;
  j["predicted_category"] = r.predicted_category;
  j["clean_predicted_category"] = r.clean_predicted_category;
  j["success"] = r.success;
  j["csd"] = jnum(r.csd);
  j["cd"] = jnum(r.cd);
  j["hd"] = jnum(r.hd);
  j["ags_clean"] = jnum(r.ags_clean);
  j["ags_adv"] = jnum(r.ags_adv);
  j["final_lambda"] = jnum(r.final_lambda);
  j["cosine"] = jnum(r.cosine);
  return j;
}

eval::EvalRecord record_from_json(const json& j) {
  eval::EvalRecord r;
  r.cloud_id = j.at("cloud_id").get<std::string>();
  r.family = family_from_string(j.at("family").get<std::string>());
  r.setting = setting_from_string(j.at("setting").get<std::string>());
  r.clean_caption = j.at("clean_caption").get<std::string>();
  r.adv_caption = j.at("adv_caption").get<std::string>();
  r.reference_caption = j.at("reference_caption").get<std::string>();
  r.gt_category = j.at("gt_category").get<std::string>();
  r.target_category = j.at("target_category").get<std::string>();
  r.predicted_category = j.at("predicted_category").get<std::string>();
  r.clean_predicted_category = j.at("clean_predicted_category").get<std::string>();
  r.success = j.at("success").get<bool>();
  r.csd = dnum(j.at("csd"));
  r.cd = dnum(j.at("cd"));
  r.hd = dnum(j.at("hd"));
  r.ags_clean = dnum(j.at("ags_clean"));
  r.ags_adv = dnum(j.at("ags_adv"));
  r.final_lambda = dnum(j.at("final_lambda"));
  r.cosine = dnum(j.at("cosine"));
  return r;
}

}  // namespace

void write_records(std::span<const eval::EvalRecord> records, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const eval::EvalRecord& r : records) out << record_to_json(r).dump() << "\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<eval::EvalRecord> read_records(const fs::path& path) {
  LineIn in(path);
  std::vector<eval::EvalRecord> out;
  std::string line;
  while (in.raw(line)) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(in.path, in.line_no, e.what());
    }
  }
  return out;
}

void write_summary_csv(std::span<const eval::Summary> rows, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "attack,setting,asr,ags,csd,cd_x1e2,hd_x1e2,gamma\n";
  char buf[256];
  for (const eval::Summary& s : rows) {
    int n = std::snprintf(buf, sizeof buf, "%s,%s,%.6g,%.6g,%.6g,%.6g,%.6g,", s.attack.c_str(),
                          s.setting.c_str(), s.asr, s.ags, s.csd, s.cd_x1e2, s.hd_x1e2);
    out.write(buf, n);
    if (std::isnan(s.gamma)) {
      out << "--\n";
    } else {
      n = std::snprintf(buf, sizeof buf, "%.6g\n", s.gamma);
      out.write(buf, n);
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ------------------------------------------------------------------ manifest

uint64_t config_hash(const std::map<std::string, std::string>& config) {
  uint64_t h = 14695981039346656037ull;  // FNV-1a 64
  auto eat = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [k, v] : config) {  // std::map iterates in sorted key order
    eat(k);
    eat("=");
    eat(v);
    eat("\n");
  }
  return h;
}

namespace {
std::string hash_hex(uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%016" PRIx64, h);
  return buf;
}
}  // namespace

void write_manifest(const Manifest& manifest, const fs::path& path) {
  ojson j;
  j["tool"] = manifest.tool;
  j["version"] = manifest.version;
  j["subcommand"] = manifest.subcommand;
  j["seed"] = manifest.seed;
  j["config_hash"] = hash_hex(config_hash(manifest.config));
  j["config"] = ojson::object();
  for (const auto& [k, v] : manifest.config) j["config"][k] = v;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  Manifest m;
  try {
    m.tool = j.at("tool").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.subcommand = j.at("subcommand").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& [k, v] : j.at("config").items()) m.config[k] = v.get<std::string>();
    if (j.at("config_hash").get<std::string>() != hash_hex(config_hash(m.config)))
      throw ParseError(path.string(), 0, "config hash mismatch");
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  return m;
}

}  // namespace pcadv::io
