#include "pgroup/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace pgroup {

namespace fs = std::filesystem;
using nlohmann::json;

std::string image_id(std::uint64_t index) {
  std::string s = std::to_string(index);
  return s.size() >= 6 ? s : std::string(6 - s.size(), '0') + s;
}

GrayImage marker_mask(const Marker& m, std::size_t width, std::size_t height) {
  GrayImage out(width, height);
  for (long dy = -m.radius; dy <= m.radius; ++dy)
    for (long dx = -m.radius; dx <= m.radius; ++dx)
      if (dx * dx + dy * dy <= long(m.radius) * m.radius && out.contains(m.x + dx, m.y + dy))
        out.at(std::size_t(m.x + dx), std::size_t(m.y + dy)) = 255;
  return out;
}

std::vector<std::string> audit_common(const StimulusSample& s) {
  std::vector<std::string> v;
  const auto w = s.image.width, h = s.image.height;
  if (s.image.empty()) return {"empty image"};
  for (std::size_t i = 0; i < s.masks.size(); ++i) {
    if (s.masks[i].width != w || s.masks[i].height != h) v.push_back("mask " + std::to_string(i) + " size mismatch");
    else if (count_foreground(s.masks[i]) == 0) v.push_back("mask " + std::to_string(i) + " empty");
  }
  if (!v.empty()) return v;
  for (std::size_t i = 0; i < s.markers.size(); ++i) {
    const auto& m = s.markers[i];
    const std::string tag = "marker " + std::to_string(i);
    if (m.object < 0 || std::size_t(m.object) >= s.masks.size()) {
      v.push_back(tag + " refers to missing object");
      continue;
    }
    if (!s.masks[std::size_t(m.object)].get(m.x, m.y)) v.push_back(tag + " centre off its object");
    const GrayImage disc = marker_mask(m, w, h);
    for (std::size_t p = 0; p < disc.pixels.size(); ++p)
      if (disc.pixels[p] && s.image.pixels[p] != 255) {
        v.push_back(tag + " not drawn at 255");
        break;
      }
  }
  if (s.segmentation()) {
    if (s.markers.size() != 1) v.push_back("segmentation sample needs exactly one marker");
    else if (s.target != s.masks[std::size_t(s.markers[0].object)]) v.push_back("target differs from marked mask");
  } else {
    if (s.markers.size() != 2) v.push_back("classification sample needs two markers");
    else {
      bool same = s.markers[0].object == s.markers[1].object;
      if (same != (s.label == kLabelSame)) v.push_back("label inconsistent with marker assignment");
    }
  }
  return v;
}

DatasetLayout split_counts(std::size_t count, double val_fraction) {
  require(val_fraction >= 0 && val_fraction < 1, "val_fraction must lie in [0, 1)");
  DatasetLayout l;
  l.val_count = std::size_t(std::llround(double(count) * val_fraction));
  l.train_count = count - l.val_count;
  return l;
}

namespace {

json metadata_json(const Metadata& m) {
  json j = json::object();
  for (const auto& [k, v] : m.numbers) j[k] = v;
  for (const auto& [k, v] : m.strings) j[k] = v;
  return j;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << bytes;
  if (!out) throw std::runtime_error("failed writing " + p.string());
}

/// Writes the sample's files under split_dir and returns its manifest line.
std::string store_sample(const fs::path& split_dir, std::uint64_t index, const StimulusSample& s) {
  const std::string id = image_id(index);
  json rec;
  rec["index"] = index;
  rec["id"] = id;
  rec["label"] = s.label;
  rec["task"] = s.segmentation() ? "segmentation" : "classification";
  const std::string img = "images/" + id + ".pgm";
  write_pgm(split_dir / img, s.image);
  rec["image"] = img;
  rec["image_sha256"] = sha256_file(split_dir / img);
  json masks = json::array(), digests = json::array();
  for (std::size_t i = 0; i < s.masks.size(); ++i) {
    const std::string name = "masks/" + id + "_" + std::to_string(i) + ".pgm";
    write_pgm(split_dir / name, s.masks[i]);
    masks.push_back(name);
    digests.push_back(sha256_file(split_dir / name));
  }
  rec["masks"] = masks;
  rec["mask_sha256"] = digests;
  if (s.segmentation()) {
    const std::string name = "targets/" + id + ".pgm";
    write_pgm(split_dir / name, s.target);
    rec["target"] = name;
    rec["target_sha256"] = sha256_file(split_dir / name);
  }
  json markers = json::array();
  for (const auto& m : s.markers) markers.push_back({{"x", m.x}, {"y", m.y}, {"radius", m.radius}, {"object", m.object}});
  rec["markers"] = markers;
  rec["params"] = metadata_json(s.metadata);
  return rec.dump();
}

}  // namespace

std::string dataset_digest(const fs::path& dir) {
  std::string bytes = read_file(dir / "metadata.txt");
  for (const char* split : {"train", "val"}) bytes += read_file(dir / split / "manifest.jsonl");
  return sha256_hex(bytes);
}

DatasetSummary write_dataset(const fs::path& dir, const KeyValueConfig& params, const DatasetLayout& layout,
                             const SampleGenerator& generate, const SampleAuditor& audit) {
  const std::size_t total = layout.train_count + layout.val_count;
  require(total > 0, "dataset must contain at least one image");
  for (const char* split : {"train", "val"})
    for (const char* sub : {"images", "masks", "targets"}) fs::create_directories(dir / split / sub);

  std::vector<std::string> lines(total);
  std::vector<int> labels(total);
  std::mutex err_mu;
  std::vector<std::string> violations;
  std::exception_ptr failure;
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= total) return;
      try {
        StimulusSample s = generate(i);
        auto v = audit(s);
        if (!v.empty()) {
          std::lock_guard lock(err_mu);
          for (auto& msg : v) violations.push_back(image_id(i) + ": " + msg);
        }
        const fs::path split_dir = dir / (i < layout.train_count ? "train" : "val");
        lines[i] = store_sample(split_dir, i, s);
        labels[i] = s.label;
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!failure) failure = std::current_exception();
        next = total;
        return;
      }
    }
  };
  const unsigned workers = std::max(1u, layout.workers);
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  if (!violations.empty()) {
    std::sort(violations.begin(), violations.end());
    std::string msg = std::to_string(violations.size()) + " audit violation(s):";
    for (std::size_t k = 0; k < std::min<std::size_t>(violations.size(), 10); ++k) msg += "\n  " + violations[k];
    throw AuditError(msg);
  }

  KeyValueConfig meta = params;
  meta.set("dataset.train_count", std::to_string(layout.train_count));
  meta.set("dataset.val_count", std::to_string(layout.val_count));
  meta.save(dir / "metadata.txt");

  DatasetSummary summary;
  summary.directory = dir;
  summary.train_count = layout.train_count;
  summary.val_count = layout.val_count;
  std::string train_text, val_text;
  for (std::size_t i = 0; i < total; ++i) {
    const bool train = i < layout.train_count;
    (train ? train_text : val_text) += lines[i] + "\n";
    if (labels[i] == kLabelSame) ++(train ? summary.train_same : summary.val_same);
  }
  write_file(dir / "train" / "manifest.jsonl", train_text);
  write_file(dir / "val" / "manifest.jsonl", val_text);
  summary.digest = dataset_digest(dir);
  write_file(dir / "DIGEST", summary.digest + "\n");
  return summary;
}

KeyValueConfig load_dataset_params(const fs::path& dir) { return KeyValueConfig::load(dir / "metadata.txt"); }

DatasetSplit load_split(const fs::path& dir, const std::string& split) {
  const fs::path split_dir = dir / split;
  std::ifstream in(split_dir / "manifest.jsonl");
  if (!in) throw std::runtime_error("cannot open manifest in " + split_dir.string());
  DatasetSplit out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error((split_dir / "manifest.jsonl").string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    GrayImage img = read_pgm(split_dir / rec.at("image").get<std::string>());
    if (img.width != img.height) throw std::runtime_error("non-square image in " + split_dir.string());
    if (out.ids.empty()) {
      out.image_size = img.width;
      out.segmentation = rec.contains("target");
    } else if (img.width != out.image_size) {
      throw std::runtime_error("mixed image sizes in " + split_dir.string());
    }
    out.ids.push_back(rec.at("id").get<std::string>());
    out.labels.push_back(rec.at("label").get<int>());
    out.images.push_back(std::move(img.pixels));
    if (out.segmentation) out.targets.push_back(read_pgm(split_dir / rec.at("target").get<std::string>()).pixels);
  }
  if (out.ids.empty()) throw std::runtime_error("empty split " + split_dir.string());
  return out;
}

template <std::floating_point T>
Tensor<T> batch_images(const DatasetSplit& split, std::span<const std::size_t> indices) {
  const std::size_t s = split.image_size, plane = s * s;
  Tensor<T> out({indices.size(), 1, s, s});
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto& px = split.images.at(indices[n]);
    for (std::size_t p = 0; p < plane; ++p) out[n * plane + p] = T(px[p]) / T(255);
  }
  return out;
}

template <std::floating_point T>
Tensor<T> batch_targets(const DatasetSplit& split, std::span<const std::size_t> indices) {
  if (!split.segmentation) {
    Tensor<T> out({indices.size(), 1, 1, 1});
    for (std::size_t n = 0; n < indices.size(); ++n) out[n] = split.labels.at(indices[n]) == kLabelSame ? T(1) : T(0);
    return out;
  }
  const std::size_t s = split.image_size, plane = s * s;
  Tensor<T> out({indices.size(), 1, s, s});
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto& px = split.targets.at(indices[n]);
    for (std::size_t p = 0; p < plane; ++p) out[n * plane + p] = px[p] ? T(1) : T(0);
  }
  return out;
}

template Tensor<float> batch_images<float>(const DatasetSplit&, std::span<const std::size_t>);
template Tensor<double> batch_images<double>(const DatasetSplit&, std::span<const std::size_t>);
template Tensor<float> batch_targets<float>(const DatasetSplit&, std::span<const std::size_t>);
template Tensor<double> batch_targets<double>(const DatasetSplit&, std::span<const std::size_t>);

}  // namespace pgroup
