#include "falcon/data_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace falcon {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error(ErrorKind::InvalidArgument, "unknown split '" + s + "'");
}

std::size_t SourceDataset::size() const {
  std::size_t n = 0;
  for (const auto& c : samples) n += c.size();
  return n;
}

void SourceDataset::validate() const {
  if (classes.size() != samples.size()) throw Error(ErrorKind::InvalidArgument, "class list and samples differ");
  if (classes.size() < 2) throw Error(ErrorKind::InsufficientSamples, "source dataset needs at least 2 classes");
  for (const auto& cls : samples)
    for (const auto& s : cls)
      if (s.mask.rows() != s.image.height || s.mask.cols() != s.image.width)
        throw Error(ErrorKind::MaskShapeMismatch, "source mask does not match its image");
}

std::vector<int> PatientVolume::labeled() const {
  std::vector<int> out;
  for (const auto& [i, m] : masks) out.push_back(i);
  return out;
}

std::vector<int> PatientVolume::unlabeled() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (!masks.count(i)) out.push_back(i);
  return out;
}

void PatientVolume::validate() const {
  if (acquisition.size() != slices.size())
    throw Error(ErrorKind::InvalidArgument, "patient " + id + ": acquisition list does not match slices");
  for (std::size_t i = 1; i < acquisition.size(); ++i)
    if (acquisition[i] <= acquisition[i - 1])
      throw Error(ErrorKind::InvalidArgument, "patient " + id + ": slice order must be strictly increasing");
  for (const auto& s : slices)
    if (s.channels() != 3 || s.height != height() || s.width != width())
      throw Error(ErrorKind::ShapeMismatch, "patient " + id + ": slices differ in shape");
  for (const auto& [i, m] : masks) {
    if (i < 0 || i >= size()) throw Error(ErrorKind::InvalidArgument, "patient " + id + ": labeled index out of range");
    if (m.rows() != height() || m.cols() != width())
      throw Error(ErrorKind::MaskShapeMismatch, "patient " + id + ": mask shape differs from slice");
  }
}

void SealedMasks::put(const std::string& patient, std::vector<BinaryMask> masks) {
  store_[patient] = std::move(masks);
}

const std::vector<BinaryMask>& SealedMasks::at(const std::string& patient) const {
  auto it = store_.find(patient);
  if (it == store_.end()) throw Error(ErrorKind::MissingGroundTruth, "no sealed masks for patient " + patient);
  return it->second;
}

std::vector<std::string> SealedMasks::patients() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : store_) out.push_back(k);
  return out;
}

SealedMasks SealedMasks::restrict_to(const std::vector<std::string>& ids) const {
  SealedMasks out;
  for (const auto& id : ids)
    if (contains(id)) out.put(id, at(id));
  return out;
}

// ---------------------------------------------------------------------------
// Manifest.

void Manifest::validate() const {
  std::set<std::string> seen;
  for (const auto& p : patients) {
    if (p.id.empty() || p.id.front() == '_') throw Error(ErrorKind::InvalidArgument, "invalid patient id '" + p.id + "'");
    if (!seen.insert(p.id).second) throw Error(ErrorKind::InvalidArgument, "patient " + p.id + " listed twice");
  }
  if (resize_height < 1 || resize_width < 1) throw Error(ErrorKind::InvalidArgument, "resize target must be positive");
}

std::string Manifest::to_json() const {
  json j;
  j["name"] = name;
  j["patients"] = json::array();
  for (const auto& p : patients) j["patients"].push_back({{"id", p.id}, {"split", to_string(p.split)}, {"labeled", p.labeled}});
  json drops = json::array();
  for (const auto& d : dropped) drops.push_back({{"patient", d.patient}, {"slice", d.slice}});
  j["preprocess"] = {{"resize", {resize_height, resize_width}}, {"dropped", drops}};
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    m.name = j.at("name").get<std::string>();
    for (const auto& p : j.at("patients")) {
      ManifestEntry e;
      e.id = p.at("id").get<std::string>();
      e.split = parse_split(p.at("split").get<std::string>());
      e.labeled = p.at("labeled").get<std::vector<int>>();
      std::sort(e.labeled.begin(), e.labeled.end());
      m.patients.push_back(std::move(e));
    }
    if (j.contains("preprocess")) {
      const auto& pre = j["preprocess"];
      if (pre.contains("resize")) {
        const auto r = pre["resize"].get<std::vector<int>>();
        if (r.size() != 2) throw Error(ErrorKind::InvalidArgument, "preprocess.resize must be [height, width]");
        m.resize_height = r[0];
        m.resize_width = r[1];
      }
      if (pre.contains("dropped"))
        for (const auto& d : pre["dropped"]) m.dropped.push_back({d.at("patient").get<std::string>(), d.at("slice").get<int>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace

Manifest Manifest::load(const fs::path& path) { return from_json(read_text(path)); }

void Manifest::save(const fs::path& path) const { write_text(path, to_json()); }

// ---------------------------------------------------------------------------
// PNG.

namespace {

struct PngRead {
  int height = 0;
  int width = 0;
  std::vector<png_byte> pixels;
};

PngRead read_png(const fs::path& path, png_uint_32 format) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string() + " does not exist");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw Error(ErrorKind::CorruptImage, path.string() + ": " + img.message);
  img.format = format;
  PngRead out;
  out.height = int(img.height);
  out.width = int(img.width);
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorKind::CorruptImage, path.string() + ": " + img.message);
  }
  return out;
}

void write_png(const fs::path& path, int height, int width, png_uint_32 format, const std::vector<png_byte>& pixels) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(width);
  img.height = png_uint_32(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), 0, nullptr))
    throw Error(ErrorKind::IoError, path.string() + ": " + img.message);
}

png_byte quantize(float v) { return png_byte(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

Image read_png_rgb(const fs::path& path) {
  const auto raw = read_png(path, PNG_FORMAT_RGB);
  Image img(3, raw.height, raw.width);
  const Eigen::Index hw = Eigen::Index(raw.height) * raw.width;
  for (Eigen::Index p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) img.data(c, p) = float(raw.pixels[std::size_t(p) * 3 + c]) / 255.0f;
  return img;
}

BinaryMask read_png_mask(const fs::path& path) {
  const auto raw = read_png(path, PNG_FORMAT_GRAY);
  MaskGrid g(raw.height, raw.width);
  for (int r = 0; r < raw.height; ++r)
    for (int c = 0; c < raw.width; ++c) g(r, c) = raw.pixels[std::size_t(r) * raw.width + c] > 127 ? 1 : 0;
  return BinaryMask(std::move(g));
}

void write_png_rgb(const fs::path& path, const Image& image) {
  if (image.channels() != 3) throw Error(ErrorKind::ShapeMismatch, "RGB raster needs 3 channels");
  const Eigen::Index hw = Eigen::Index(image.height) * image.width;
  std::vector<png_byte> px(std::size_t(hw) * 3);
  for (Eigen::Index p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) px[std::size_t(p) * 3 + c] = quantize(image.data(c, p));
  write_png(path, image.height, image.width, PNG_FORMAT_RGB, px);
}

void write_png_mask(const fs::path& path, const BinaryMask& mask) {
  std::vector<png_byte> px(std::size_t(mask.size()));
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c) px[std::size_t(r * mask.cols() + c)] = mask(r, c) ? 255 : 0;
  write_png(path, int(mask.rows()), int(mask.cols()), PNG_FORMAT_GRAY, px);
}

// ---------------------------------------------------------------------------
// Resampling and normalisation.

Image resize_bilinear(const Image& image, int height, int width) {
  if (height < 1 || width < 1) throw Error(ErrorKind::InvalidArgument, "resize target must be positive");
  if (image.height == height && image.width == width) return image;
  Image out(image.channels(), height, width);
  const double sy = double(image.height) / height, sx = double(image.width) / width;
  for (int r = 0; r < height; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, double(image.height - 1));
    const int y0 = int(std::floor(y));
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double fy = y - y0;
    for (int c = 0; c < width; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, double(image.width - 1));
      const int x0 = int(std::floor(x));
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double fx = x - x0;
      for (Eigen::Index ch = 0; ch < image.channels(); ++ch) {
        auto at = [&](int rr, int cc) { return double(image.data(ch, Eigen::Index(rr) * image.width + cc)); };
        const double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
        const double bot = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
        out.data(ch, Eigen::Index(r) * width + c) = float(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, int height, int width) {
  if (height < 1 || width < 1) throw Error(ErrorKind::InvalidArgument, "resize target must be positive");
  if (mask.rows() == height && mask.cols() == width) return mask;
  BinaryMask out(height, width);
  for (int r = 0; r < height; ++r) {
    const auto rr = std::min<Eigen::Index>(Eigen::Index((r + 0.5) * double(mask.rows()) / height), mask.rows() - 1);
    for (int c = 0; c < width; ++c) {
      const auto cc = std::min<Eigen::Index>(Eigen::Index((c + 0.5) * double(mask.cols()) / width), mask.cols() - 1);
      out.set(r, c, mask(rr, cc));
    }
  }
  return out;
}

Image normalize_min_max(const Image& image) {
  Image out = image;
  const float lo = image.data.minCoeff(), hi = image.data.maxCoeff();
  if (hi > lo)
    out.data = ((image.data.array() - lo) / (hi - lo)).matrix();
  else
    out.data.setConstant(hi > 0 ? 1.0f : 0.0f);
  return out;
}

Image gray_to_rgb(const Grid<float>& gray) {
  Image out(3, int(gray.rows()), int(gray.cols()));
  for (Eigen::Index r = 0; r < gray.rows(); ++r)
    for (Eigen::Index c = 0; c < gray.cols(); ++c)
      for (int ch = 0; ch < 3; ++ch) out.data(ch, r * gray.cols() + c) = gray(r, c);
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion.

DropResult drop_empty(const std::vector<Image>& slices, const std::map<int, BinaryMask>& masks, bool drop_empty_masks) {
  DropResult out;
  for (int i = 0; i < int(slices.size()); ++i) {
    bool drop = slices[i].data.size() == 0 || slices[i].data.maxCoeff() == 0.0f;
    if (!drop && drop_empty_masks) {
      auto it = masks.find(i);
      drop = it != masks.end() && it->second.empty();
    }
    (drop ? out.dropped : out.kept).push_back(i);
  }
  return out;
}

namespace {

std::string slice_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d.png", index);
  return buf;
}

// File indices of NNNN.png entries in a directory, ascending.
std::vector<int> list_indices(const fs::path& dir) {
  std::vector<int> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.path().extension() != ".png") continue;
    const auto stem = e.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
      throw Error(ErrorKind::CorruptImage, "unexpected raster name " + (dir / name).string());
    out.push_back(std::stoi(stem));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Image prepare_slice(const Image& raw, const IngestOptions& opt) {
  return normalize_min_max(resize_bilinear(raw, opt.height, opt.width));
}

}  // namespace

IngestResult ingest_patients(const fs::path& root, const Manifest& manifest, const IngestOptions& opt) {
  manifest.validate();
  IngestResult res;
  res.manifest = manifest;
  res.manifest.resize_height = opt.height;
  res.manifest.resize_width = opt.width;
  for (const auto& entry : manifest.patients) {
    const fs::path dir = root / entry.id;
    if (!fs::is_directory(dir / "slices")) throw Error(ErrorKind::MissingFile, (dir / "slices").string() + " missing");
    const auto files = list_indices(dir / "slices");
    std::vector<Image> raw;
    std::map<int, BinaryMask> raw_masks;
    for (const int f : files) raw.push_back(read_png_rgb(dir / "slices" / slice_name(f)));
    for (const int l : entry.labeled) {
      auto pos = std::lower_bound(files.begin(), files.end(), l);
      if (pos == files.end() || *pos != l)
        throw Error(ErrorKind::MissingFile, "patient " + entry.id + ": labeled slice " + std::to_string(l) + " has no image");
      const int i = int(pos - files.begin());
      auto m = read_png_mask(dir / "masks" / slice_name(l));
      if (m.rows() != raw[i].height || m.cols() != raw[i].width)
        throw Error(ErrorKind::MaskShapeMismatch, "patient " + entry.id + ": mask " + std::to_string(l) + " is " +
                                                      std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                                      ", slice is " + std::to_string(raw[i].height) + "x" +
                                                      std::to_string(raw[i].width));
      raw_masks[i] = std::move(m);
    }
    const auto kept = drop_empty(raw, raw_masks, opt.drop_empty_masks);
    PatientVolume vol;
    vol.id = entry.id;
    vol.split = entry.split;
    for (const int d : kept.dropped) {
      DroppedSlice rec{entry.id, files[d]};
      if (std::find(res.manifest.dropped.begin(), res.manifest.dropped.end(), rec) == res.manifest.dropped.end())
        res.manifest.dropped.push_back(rec);
    }
    for (const int i : kept.kept) {
      const int pos = vol.size();
      vol.slices.push_back(prepare_slice(raw[i], opt));
      vol.acquisition.push_back(files[i]);
      if (auto it = raw_masks.find(i); it != raw_masks.end())
        vol.masks[pos] = resize_nearest(it->second, opt.height, opt.width);
    }
    vol.validate();

    const fs::path sealed_dir = root / "_sealed" / entry.id;
    if (fs::is_directory(sealed_dir)) {
      std::vector<BinaryMask> sealed;
      for (const int f : vol.acquisition) {
        auto m = read_png_mask(sealed_dir / slice_name(f));
        sealed.push_back(resize_nearest(m, opt.height, opt.width));
      }
      res.sealed.put(entry.id, std::move(sealed));
    }
    res.volumes.push_back(std::move(vol));
  }
  return res;
}

IngestResult ingest_patients(const fs::path& root, const IngestOptions& opt) {
  return ingest_patients(root, Manifest::load(root / "manifest.json"), opt);
}

Manifest export_patients(const fs::path& root, const std::string& name, const std::vector<PatientVolume>& volumes,
                         const SealedMasks* sealed) {
  Manifest m;
  m.name = name;
  if (!volumes.empty()) {
    m.resize_height = volumes.front().height();
    m.resize_width = volumes.front().width();
  }
  for (const auto& v : volumes) {
    v.validate();
    ManifestEntry e{v.id, v.split, {}};
    for (int i = 0; i < v.size(); ++i) {
      write_png_rgb(root / v.id / "slices" / slice_name(v.acquisition[i]), v.slices[i]);
      if (auto it = v.masks.find(i); it != v.masks.end()) {
        write_png_mask(root / v.id / "masks" / slice_name(v.acquisition[i]), it->second);
        e.labeled.push_back(v.acquisition[i]);
      }
    }
    if (sealed && v.split != Split::Train && sealed->contains(v.id)) {
      const auto& s = sealed->at(v.id);
      if (int(s.size()) != v.size()) throw Error(ErrorKind::MissingGroundTruth, "sealed masks incomplete for " + v.id);
      for (int i = 0; i < v.size(); ++i) write_png_mask(root / "_sealed" / v.id / slice_name(v.acquisition[i]), s[i]);
    }
    m.patients.push_back(std::move(e));
  }
  m.validate();
  m.save(root / "manifest.json");
  return m;
}

void export_source(const fs::path& root, const std::string& name, const SourceDataset& data) {
  data.validate();
  json j;
  j["name"] = name;
  j["classes"] = json::array();
  for (std::size_t c = 0; c < data.classes.size(); ++c) {
    const std::string dir = "class_" + std::to_string(c);
    j["classes"].push_back({{"id", dir}, {"family", data.classes[c]}, {"samples", data.samples[c].size()}});
    for (std::size_t i = 0; i < data.samples[c].size(); ++i) {
      write_png_rgb(root / dir / "images" / slice_name(int(i)), data.samples[c][i].image);
      write_png_mask(root / dir / "masks" / slice_name(int(i)), data.samples[c][i].mask);
    }
  }
  write_text(root / "manifest.json", j.dump(2) + "\n");
}

SourceDataset ingest_source(const fs::path& root, int height, int width) {
  json j;
  try {
    j = json::parse(read_text(root / "manifest.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("malformed source manifest: ") + e.what());
  }
  if (!j.contains("classes")) throw Error(ErrorKind::InvalidArgument, "source manifest lacks 'classes'");
  SourceDataset data;
  IngestOptions opt{height, width, false};
  for (const auto& c : j["classes"]) {
    const std::string dir = c.at("id").get<std::string>();
    const int n = c.at("samples").get<int>();
    data.classes.push_back(c.value("family", dir));
    data.samples.emplace_back();
    for (int i = 0; i < n; ++i) {
      const auto img = read_png_rgb(root / dir / "images" / slice_name(i));
      const auto mask = read_png_mask(root / dir / "masks" / slice_name(i));
      if (mask.rows() != img.height || mask.cols() != img.width)
        throw Error(ErrorKind::MaskShapeMismatch, dir + "/" + slice_name(i) + ": mask and image differ in shape");
      data.samples.back().push_back({prepare_slice(img, opt), resize_nearest(mask, height, width)});
    }
  }
  data.validate();
  return data;
}

}  // namespace falcon
