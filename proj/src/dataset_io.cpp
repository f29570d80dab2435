#include "attr/dataset_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace attr {

void write_image_ppm(const std::string& path, const Image& im) {
  if (im.dim(0) != 3) throw IoError("write_image_ppm: expected 3 channels");
  const int h = im.dim(1), w = im.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_image_ppm: cannot open " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::floor(image_px(im, c, y, x) * 255.0f + 0.5f);
        row[static_cast<size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::clamp(v, 0.0f, 255.0f));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("write_image_ppm: write failed for " + path);
}

Image read_image_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_image_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw IoError("read_image_ppm: bad magic in " + path);
  auto next_int = [&](const char* what) {
    // skip whitespace and '#' comments
    int ch;
    while ((ch = f.get()) != EOF) {
      if (ch == '#') {
        while ((ch = f.get()) != EOF && ch != '\n') {}
      } else if (!std::isspace(ch)) {
        f.unget();
        break;
      }
    }
    int v;
    if (!(f >> v)) throw IoError(std::string("read_image_ppm: missing ") + what + " in " + path);
    return v;
  };
  const int w = next_int("width"), h = next_int("height"), maxval = next_int("maxval");
  if (w <= 0 || h <= 0 || maxval != 255)
    throw IoError("read_image_ppm: unsupported header in " + path);
  f.get();  // single whitespace after maxval
  Image im = Image::zeros({3, h, w});
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!f) throw IoError("read_image_ppm: truncated pixel data in " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        image_set_px(im, c, y, x,
                     static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.0f);
  }
  return im;
}

namespace {

std::vector<double> parse_number_line(const std::string& line, const std::string& path,
                                      int line_no) {
  std::vector<double> vals;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      size_t used = 0;
      const double v = std::stod(tok, &used);
      while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
      if (used != tok.size()) throw std::invalid_argument(tok);
      vals.push_back(v);
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(line_no) + ": not a number: '" + tok + "'");
    }
  }
  return vals;
}

Polygon polygon_from_coords(const std::vector<double>& v, const std::string& path, int line_no) {
  if (v.size() % 2 != 0 || v.size() < 6)
    throw IoError(path + ":" + std::to_string(line_no) +
                  ": expected an even count (>= 6) of coordinates, got " +
                  std::to_string(v.size()));
  std::vector<Vec2> pts;
  for (size_t i = 0; i < v.size(); i += 2) pts.emplace_back(v[i], v[i + 1]);
  try {
    return Polygon(std::move(pts));
  } catch (const GeometryError& e) {
    throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
  }
}

}  // namespace

void write_annotations(const std::string& path, const std::vector<Polygon>& polys) {
  std::ofstream f(path);
  if (!f) throw IoError("write_annotations: cannot open " + path);
  for (const auto& p : polys) {
    for (int i = 0; i < p.size(); ++i) {
      if (i) f << ",";
      f << static_cast<long>(std::lround(p[i].x())) << "," << static_cast<long>(std::lround(p[i].y()));
    }
    f << "\n";
  }
}

std::vector<Polygon> read_annotations(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_annotations: cannot open " + path);
  std::vector<Polygon> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(polygon_from_coords(parse_number_line(line, path, line_no), path, line_no));
  }
  return out;
}

void write_detections(const std::string& path, const std::vector<ScoredPolygon>& dets) {
  std::ofstream f(path);
  if (!f) throw IoError("write_detections: cannot open " + path);
  char buf[32];
  for (const auto& d : dets) {
    for (int i = 0; i < d.poly.size(); ++i) {
      if (i) f << ",";
      f << static_cast<long>(std::lround(d.poly[i].x())) << ","
        << static_cast<long>(std::lround(d.poly[i].y()));
    }
    std::snprintf(buf, sizeof(buf), "%.6f", d.score);
    f << "," << buf << "\n";
  }
}

std::vector<ScoredPolygon> read_detections(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_detections: cannot open " + path);
  std::vector<ScoredPolygon> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto vals = parse_number_line(line, path, line_no);
    if (vals.size() % 2 != 1 || vals.size() < 7)
      throw IoError(path + ":" + std::to_string(line_no) +
                    ": expected coordinates plus score, got " + std::to_string(vals.size()) +
                    " values");
    ScoredPolygon sp;
    sp.score = vals.back();
    vals.pop_back();
    sp.poly = polygon_from_coords(vals, path, line_no);
    out.push_back(std::move(sp));
  }
  return out;
}

void write_manifest(const std::string& root, const std::vector<std::string>& ids) {
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "gts");
  std::ofstream f((fs::path(root) / "manifest.txt").string());
  if (!f) throw IoError("write_manifest: cannot open manifest in " + root);
  for (const auto& id : ids) f << id << "\n";
}

DatasetDir open_dataset(const std::string& root) {
  DatasetDir d;
  d.root = root;
  std::ifstream f((fs::path(root) / "manifest.txt").string());
  if (!f) throw IoError("open_dataset: no manifest.txt under " + root);
  std::string id;
  while (std::getline(f, id))
    if (!id.empty()) d.ids.push_back(id);
  return d;
}

std::string image_path(const DatasetDir& d, const std::string& id) {
  return (fs::path(d.root) / "images" / (id + ".ppm")).string();
}

std::string gt_path(const DatasetDir& d, const std::string& id) {
  return (fs::path(d.root) / "gts" / (id + ".txt")).string();
}

}  // namespace attr
