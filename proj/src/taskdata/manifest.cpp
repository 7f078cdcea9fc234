#include "metakey/taskdata/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace metakey::taskdata {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

double parse_coord(const std::string& text, std::size_t row, std::string_view column) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw DataError("manifest row " + std::to_string(row) + ": column " + std::string(column) +
                    " is not a finite number ('" + text + "')");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

int read_header_int(std::istream& in) {
  int c = in.peek();
  while (c != EOF) {
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
    c = in.peek();
  }
  int v = -1;
  in >> v;
  return v;
}

}  // namespace

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path.string() + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw DataError("'" + path.string() + "' is not a binary PPM (P6)");
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw DataError("'" + path.string() + "' has an unsupported PPM header");
  }
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw DataError("'" + path.string() + "' is truncated");
  }
  Image img(h, w);
  const float scale = 1.0f / static_cast<float>(maxval);
  std::transform(raw.begin(), raw.end(), img.pixels.begin(),
                 [scale](unsigned char v) { return static_cast<float>(v) * scale; });
  return img;
}

void write_ppm(const Image& image, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image '" + path.string() + "'");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), raw.begin(), [](float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

TaskCollection load_manifest(const fs::path& root, const fs::path& manifest_file,
                             const WarningSink& warn) {
  const fs::path manifest_path =
      manifest_file.is_absolute() ? manifest_file : root / manifest_file;
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest '" + manifest_path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest '" + manifest_path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  if (line != kManifestHeader) {
    throw DataError("manifest header must be '" + std::string(kManifestHeader) + "', got '" + line +
                    "'");
  }

  std::vector<Task> tasks;
  std::map<std::string, std::size_t> day_index;
  std::set<std::pair<std::string, std::string>> seen;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 7) {
      throw DataError("manifest row " + std::to_string(row) + ": expected 7 columns, found " +
                      std::to_string(f.size()));
    }
    Sample s;
    s.image_path = f[0];
    s.day_id = f[1];
    try {
      s.season = parse_season(f[2]);
    } catch (const DataError&) {
      throw DataError("manifest row " + std::to_string(row) + ": unknown season '" + f[2] + "'");
    }
    s.label.vanishing_point = {parse_coord(f[3], row, "vp_x"), parse_coord(f[4], row, "vp_y")};
    s.label.left_x = parse_coord(f[5], row, "left_x");
    s.label.right_x = parse_coord(f[6], row, "right_x");

    if (!seen.emplace(s.day_id, s.image_path).second) {
      throw DataError("manifest row " + std::to_string(row) + ": duplicate entry (" + s.day_id +
                      ", " + s.image_path + ")");
    }
    const fs::path image_file = root / s.image_path;
    if (!fs::exists(image_file)) {
      throw DataError("manifest row " + std::to_string(row) + ": image file '" +
                      image_file.string() + "' does not exist");
    }
    s.image = std::make_shared<const Image>(read_ppm(image_file));
    if (warn && s.label.left_x > s.label.right_x) {
      warn("manifest row " + std::to_string(row) + ": left_x > right_x");
    }
    if (warn && s.label.vanishing_point.y >= s.image->height) {
      warn("manifest row " + std::to_string(row) + ": vanishing point below the image");
    }

    auto [it, inserted] = day_index.emplace(s.day_id, tasks.size());
    if (inserted) {
      tasks.push_back(Task{s.day_id, s.season, {}});
    } else if (tasks[it->second].season != s.season) {
      throw DataError("manifest row " + std::to_string(row) + ": day '" + s.day_id +
                      "' was already tagged '" +
                      std::string(to_string(tasks[it->second].season)) + "'");
    }
    tasks[it->second].samples.push_back(std::move(s));
  }
  return TaskCollection(std::move(tasks));
}

void write_manifest(const TaskCollection& collection, const fs::path& root,
                    const fs::path& manifest_file) {
  fs::create_directories(root);
  const fs::path manifest_path =
      manifest_file.is_absolute() ? manifest_file : root / manifest_file;
  std::ofstream out(manifest_path);
  if (!out) throw DataError("cannot write manifest '" + manifest_path.string() + "'");
  out << kManifestHeader << '\n';
  for (const auto& task : collection.tasks()) {
    for (std::size_t i = 0; i < task.samples.size(); ++i) {
      const Sample& s = task.samples[i];
      std::string rel = s.image_path;
      if (rel.empty()) {
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.ppm", i);
        rel = (fs::path(task.day_id) / name).generic_string();
      }
      if (s.image) write_ppm(*s.image, root / rel);
      out << csv_field(rel) << ',' << csv_field(task.day_id) << ',' << to_string(task.season)
          << ',' << format_double(s.label.vanishing_point.x) << ','
          << format_double(s.label.vanishing_point.y) << ',' << format_double(s.label.left_x)
          << ',' << format_double(s.label.right_x) << '\n';
    }
  }
}

}  // namespace metakey::taskdata
