#pragma once

// Clip records and their on-disk form.
//
// Manifest: JSON Lines. Line 1 is a header object describing the task and
// class counts; every following non-blank line is one clip. Feature grids live
// in separate binary files referenced relative to the manifest:
//
//   8 x uint32 little-endian header: magic "STGF", version, t, h, w, c,
//   keyframe_id (two's complement), CRC-32 of the payload
//   t*h*w*c float32 little-endian values, row-major (t, h, w, c)

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stgraph/config.hpp"
#include "stgraph/error.hpp"
#include "stgraph/graph.hpp"
#include "stgraph/tensor.hpp"

namespace stgraph {

struct ForegroundBox {
  Box box;
  std::vector<int> actions;  // action task: active classes
  int object_class = -1;     // scene-graph task

  friend bool operator==(const ForegroundBox&, const ForegroundBox&) = default;
};

/// Unlabelled person detection; gets labels by IoU matching during training.
struct Detection {
  Box box;
  double score = 1.0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct RelationLabel {
  int subject = 0;
  int object = 0;
  int predicate = 0;
  friend bool operator==(const RelationLabel&, const RelationLabel&) = default;
};

struct KeyframeRecord {
  int keyframe_id = 0;
  std::string grid_path;  // relative to the manifest directory
  FeatureGrid grid;
  std::vector<ForegroundBox> foreground;
  std::vector<Detection> detections;
  std::vector<Box> proposals;
  std::vector<RelationLabel> relations;

  friend bool operator==(const KeyframeRecord&, const KeyframeRecord&) = default;
};

struct ClipRecord {
  std::string clip_id;
  std::vector<KeyframeRecord> keyframes;
  friend bool operator==(const ClipRecord&, const ClipRecord&) = default;
};

struct DatasetHeader {
  Task task = Task::Action;
  int num_action_classes = 0;
  int num_object_classes = 0;
  int num_relation_classes = 0;
  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<ClipRecord> clips;

  const ClipRecord& clip(const std::string& id) const {
    for (const auto& c : clips)
      if (c.clip_id == id) return c;
    throw LookupError("unknown clip '" + id + "'");
  }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Grid blobs.

inline constexpr std::uint32_t kGridMagic = 0x46475453;  // "STGF" read as little-endian
inline constexpr std::uint32_t kGridVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace detail

inline std::string encode_grid(const FeatureGrid& grid) {
  std::string payload;
  payload.reserve(grid.values().size() * 4);
  for (double v : grid.values().values()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    detail::put_u32(payload, bits);
  }
  std::string out;
  detail::put_u32(out, kGridMagic);
  detail::put_u32(out, kGridVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(grid.t()));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.h()));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.w()));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.c()));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.keyframe_id()));
  detail::put_u32(out, detail::crc32_of(payload));
  return out + payload;
}

inline FeatureGrid decode_grid(const std::string& bytes, const std::string& where) {
  if (bytes.size() < 32) throw ParseError(where + ": grid file shorter than its header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::array<std::uint32_t, 8> h{};
  for (std::size_t i = 0; i < 8; ++i) h[i] = detail::get_u32(p + 4 * i);
  if (h[0] != kGridMagic) throw ParseError(where + ": bad grid magic");
  if (h[1] != kGridVersion) throw ParseError(where + ": unsupported grid version " + std::to_string(h[1]));
  const std::size_t count = std::size_t{h[2]} * h[3] * h[4] * h[5];
  if (count == 0) throw ParseError(where + ": grid has an empty dimension");
  if (bytes.size() != 32 + 4 * count) {
    throw ParseError(where + ": payload holds " + std::to_string((bytes.size() - 32) / 4) + " values, header says " +
                     std::to_string(count));
  }
  const std::string payload = bytes.substr(32);
  if (detail::crc32_of(payload) != h[7]) throw ParseError(where + ": grid checksum mismatch");
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = detail::get_u32(p + 32 + 4 * i);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    values[i] = f;
  }
  try {
    return FeatureGrid(Tensor({h[2], h[3], h[4], h[5]}, std::move(values)), static_cast<std::int32_t>(h[6]));
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LookupError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LookupError("failed writing " + path.string());
}

inline FeatureGrid load_grid(const std::filesystem::path& path) { return decode_grid(read_file(path), path.string()); }
inline void save_grid(const std::filesystem::path& path, const FeatureGrid& grid) { write_file(path, encode_grid(grid)); }

// ---------------------------------------------------------------------------
// Manifest.

inline constexpr const char* kManifestFormat = "stgraph-manifest";
inline constexpr int kManifestVersion = 1;

namespace detail {

using nlohmann::json;

inline json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box parse_box(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw ParseError(where + ": box must be [x1, y1, x2, y2]");
  for (const auto& v : j)
    if (!v.is_number()) throw ParseError(where + ": box coordinates must be numbers");
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  b.validate(where + ": box");
  return b;
}

inline json header_json(const DatasetHeader& h) {
  json j{{"format", kManifestFormat}, {"version", kManifestVersion}, {"task", std::string(to_string(h.task))}};
  if (h.task == Task::Action) {
    j["num_action_classes"] = h.num_action_classes;
  } else {
    j["num_object_classes"] = h.num_object_classes;
    j["num_relation_classes"] = h.num_relation_classes;
  }
  return j;
}

inline json clip_json(const ClipRecord& clip, Task task) {
  json kfs = json::array();
  for (const auto& kf : clip.keyframes) {
    json fg = json::array();
    for (const auto& f : kf.foreground) {
      json e{{"box", box_json(f.box)}};
      if (task == Task::Action) e["actions"] = f.actions;
      else e["object_class"] = f.object_class;
      fg.push_back(std::move(e));
    }
    json k{{"keyframe_id", kf.keyframe_id}, {"grid", kf.grid_path}, {"foreground", std::move(fg)}};
    if (!kf.detections.empty()) {
      json dets = json::array();
      for (const auto& d : kf.detections) dets.push_back({{"box", box_json(d.box)}, {"score", d.score}});
      k["detections"] = std::move(dets);
    }
    if (!kf.proposals.empty()) {
      json props = json::array();
      for (const auto& p : kf.proposals) props.push_back(box_json(p));
      k["proposals"] = std::move(props);
    }
    if (task == Task::SceneGraph) {
      json rels = json::array();
      for (const auto& r : kf.relations) rels.push_back({{"subject", r.subject}, {"object", r.object}, {"predicate", r.predicate}});
      k["relations"] = std::move(rels);
    }
    kfs.push_back(std::move(k));
  }
  return json{{"clip_id", clip.clip_id}, {"keyframes", std::move(kfs)}};
}

template <class T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + ": field '" + key + "': " + e.what());
  }
}

}  // namespace detail

/// Checks record invariants against the header; `where` prefixes messages.
inline void validate_clip(const ClipRecord& clip, const DatasetHeader& header, const std::string& where) {
  if (clip.clip_id.empty()) throw ValidationError(where + ": empty clip_id");
  if (clip.keyframes.empty()) throw ValidationError(where + ": clip '" + clip.clip_id + "' has no keyframes");
  std::optional<std::array<std::size_t, 3>> hwc;
  for (std::size_t i = 0; i < clip.keyframes.size(); ++i) {
    const auto& kf = clip.keyframes[i];
    const std::string at = where + ": clip '" + clip.clip_id + "' keyframe " + std::to_string(kf.keyframe_id);
    if (i > 0 && kf.keyframe_id <= clip.keyframes[i - 1].keyframe_id)
      throw ValidationError(at + ": keyframe ids must be strictly increasing");
    if (kf.grid.keyframe_id() != kf.keyframe_id)
      throw ValidationError(at + ": grid header carries keyframe " + std::to_string(kf.grid.keyframe_id()));
    const std::array<std::size_t, 3> shape{kf.grid.h(), kf.grid.w(), kf.grid.c()};
    if (hwc && *hwc != shape) throw ValidationError(at + ": grid h/w/c differ from earlier keyframes");
    hwc = shape;
    for (const auto& f : kf.foreground) {
      f.box.validate(at + ": foreground box");
      if (header.task == Task::Action) {
        for (int c : f.actions)
          if (c < 0 || c >= header.num_action_classes)
            throw ValidationError(at + ": unknown action class " + std::to_string(c));
      } else if (f.object_class < 0 || f.object_class >= header.num_object_classes) {
        throw ValidationError(at + ": unknown object class " + std::to_string(f.object_class));
      }
    }
    for (const auto& d : kf.detections) {
      d.box.validate(at + ": detection box");
      if (!(d.score >= 0.0 && d.score <= 1.0)) throw ValidationError(at + ": detection score outside [0, 1]");
    }
    for (const auto& p : kf.proposals) p.validate(at + ": proposal box");
    const int n = static_cast<int>(kf.foreground.size());
    for (const auto& r : kf.relations) {
      if (r.subject < 0 || r.subject >= n || r.object < 0 || r.object >= n || r.subject == r.object)
        throw ValidationError(at + ": relation endpoints invalid");
      if (r.predicate < 0 || r.predicate >= header.num_relation_classes)
        throw ValidationError(at + ": unknown relation class " + std::to_string(r.predicate));
    }
  }
}

/// Grid h/w/c shared by every keyframe of the dataset.
inline std::array<std::size_t, 3> dataset_grid_shape(const Dataset& ds) {
  std::optional<std::array<std::size_t, 3>> shape;
  for (const auto& clip : ds.clips) {
    for (const auto& kf : clip.keyframes) {
      const std::array<std::size_t, 3> s{kf.grid.h(), kf.grid.w(), kf.grid.c()};
      if (shape && *shape != s) throw ValidationError("clip '" + clip.clip_id + "': grid shape differs across clips");
      shape = s;
    }
  }
  if (!shape) throw ValidationError("dataset has no keyframes");
  return *shape;
}

/// Parses a manifest and every grid it references. Errors carry line numbers.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  using nlohmann::json;
  std::ifstream in(manifest_path);
  if (!in) throw LookupError("cannot open manifest " + manifest_path.string());
  const auto base = manifest_path.parent_path();
  Dataset ds;
  bool have_header = false;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest_path.filename().string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!have_header) {
      if (detail::require<std::string>(j, "format", where) != kManifestFormat)
        throw ParseError(where + ": not a stgraph manifest");
      if (detail::require<int>(j, "version", where) != kManifestVersion)
        throw ParseError(where + ": unsupported manifest version");
      try {
        ds.header.task = parse_task(detail::require<std::string>(j, "task", where));
      } catch (const ConfigError& e) {
        throw ParseError(where + ": " + e.what());
      }
      if (ds.header.task == Task::Action) {
        ds.header.num_action_classes = detail::require<int>(j, "num_action_classes", where);
      } else {
        ds.header.num_object_classes = detail::require<int>(j, "num_object_classes", where);
        ds.header.num_relation_classes = detail::require<int>(j, "num_relation_classes", where);
      }
      have_header = true;
      continue;
    }
    ClipRecord clip;
    clip.clip_id = detail::require<std::string>(j, "clip_id", where);
    if (!seen.insert(clip.clip_id).second) throw ParseError(where + ": duplicate clip '" + clip.clip_id + "'");
    const auto kfs = detail::require<json>(j, "keyframes", where);
    if (!kfs.is_array()) throw ParseError(where + ": keyframes must be an array");
    for (const auto& k : kfs) {
      KeyframeRecord kf;
      kf.keyframe_id = detail::require<int>(k, "keyframe_id", where);
      const std::string at = where + ": clip '" + clip.clip_id + "' keyframe " + std::to_string(kf.keyframe_id);
      kf.grid_path = detail::require<std::string>(k, "grid", at);
      kf.grid = load_grid(base / kf.grid_path);
      for (const auto& f : detail::require<json>(k, "foreground", at)) {
        ForegroundBox fb;
        fb.box = detail::parse_box(f.value("box", json()), at);
        if (ds.header.task == Task::Action) fb.actions = detail::require<std::vector<int>>(f, "actions", at);
        else fb.object_class = detail::require<int>(f, "object_class", at);
        kf.foreground.push_back(std::move(fb));
      }
      for (const auto& d : k.value("detections", json::array()))
        kf.detections.push_back({detail::parse_box(d.value("box", json()), at), detail::require<double>(d, "score", at)});
      for (const auto& p : k.value("proposals", json::array())) kf.proposals.push_back(detail::parse_box(p, at));
      for (const auto& r : k.value("relations", json::array()))
        kf.relations.push_back({detail::require<int>(r, "subject", at), detail::require<int>(r, "object", at),
                                detail::require<int>(r, "predicate", at)});
      clip.keyframes.push_back(std::move(kf));
    }
    validate_clip(clip, ds.header, where);
    ds.clips.push_back(std::move(clip));
  }
  if (!have_header) throw ParseError(manifest_path.string() + ": empty manifest, no clips");
  if (ds.clips.empty()) throw ParseError(manifest_path.string() + ": no clips");
  dataset_grid_shape(ds);
  return ds;
}

/// Writes the manifest and every grid (at each keyframe's grid_path).
inline void save_dataset(const std::filesystem::path& manifest_path, const Dataset& ds) {
  const auto base = manifest_path.parent_path();
  std::string text = detail::header_json(ds.header).dump() + "\n";
  for (const auto& clip : ds.clips) {
    validate_clip(clip, ds.header, "save");
    text += detail::clip_json(clip, ds.header.task).dump() + "\n";
    for (const auto& kf : clip.keyframes) save_grid(base / kf.grid_path, kf.grid);
  }
  write_file(manifest_path, text);
}

}  // namespace stgraph
