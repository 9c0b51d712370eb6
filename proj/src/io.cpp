#include "blendlab/io.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "blendlab/common.hpp"

namespace blendlab {

namespace {

// ---- strict config reading ----

class KeyReader {
 public:
  KeyReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, where_ + ": expected a table/object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("not a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw std::invalid_argument("not an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<std::int64_t>() < 0)
            throw std::invalid_argument("negative");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw std::invalid_argument("not a number");
      } else {
        if (!it->is_string()) throw std::invalid_argument("not a string");
      }
      out = it->template get<T>();
    } catch (const std::exception& e) {
      fail(ErrorCode::kConfig, where_ + "." + key + ": " + e.what());
    }
  }

  const json* nested(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(ErrorCode::kConfig, where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// ---- raw little-endian tensors ----

template <typename T>
void write_raw(const fs::path& path, std::span<const T> values) {
  static_assert(std::is_arithmetic_v<T>);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kMissingInput, "cannot open " + path.string() + " for writing");
  std::vector<unsigned char> buf(values.size() * sizeof(T));
  std::memcpy(buf.data(), values.data(), buf.size());
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < values.size(); ++i) std::reverse(buf.begin() + i * sizeof(T), buf.begin() + (i + 1) * sizeof(T));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorCode::kInternal, "short write to " + path.string());
}

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::size_t count) {
  if (!fs::exists(path)) fail(ErrorCode::kMissingInput, "missing file " + path.string());
  const auto bytes = fs::file_size(path);
  if (bytes != count * sizeof(T))
    fail(ErrorCode::kInvariant, path.string() + ": expected " + std::to_string(count * sizeof(T)) + " bytes, found " +
                                    std::to_string(bytes));
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) fail(ErrorCode::kMissingInput, "cannot read " + path.string());
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < count; ++i) std::reverse(buf.begin() + i * sizeof(T), buf.begin() + (i + 1) * sizeof(T));
  std::vector<T> out(count);
  std::memcpy(out.data(), buf.data(), buf.size());
  return out;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
}

const json& field(const json& j, const char* key, const fs::path& where) {
  auto it = j.find(key);
  if (it == j.end()) fail(ErrorCode::kInvariant, where.string() + ": missing field '" + key + "'");
  return *it;
}

}  // namespace

json to_json(const SynthConfig& c) {
  return {{"image_size", c.image_size},   {"channels", c.channels}, {"num_identities", c.num_identities},
          {"images_per_identity", c.images_per_identity}, {"d_id", c.d_id}, {"d_attr", c.d_attr},
          {"rho", c.rho},                 {"landmark_count", c.landmark_count}, {"master_seed", c.master_seed}};
}

json to_json(const BlendConfig& c) {
  return {{"candidate_pool_size", c.candidate_pool_size},
          {"mask_variant", to_string(c.mask_variant)},
          {"blur_sigma", c.blur_sigma},
          {"color_region", to_string(c.color_region)}};
}

json to_json(const MarginConfig& c) { return {{"s", c.s}, {"m", c.m}, {"K", c.K}}; }

json to_json(const PretrainConfig& c) {
  return {{"p_replace", c.p_replace}, {"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"lr", c.lr},               {"momentum", c.momentum},     {"lr_schedule", c.lr_schedule},
          {"seed", c.seed},           {"blend", to_json(c.blend)}};
}

json to_json(const LossWeights& c) {
  return {{"lambda1", c.lambda1}, {"lambda2", c.lambda2}, {"lambda3", c.lambda3}};
}

void read_into(const json& j, SynthConfig& c) {
  KeyReader r(j, "data");
  r.get("image_size", c.image_size);
  r.get("channels", c.channels);
  r.get("num_identities", c.num_identities);
  r.get("images_per_identity", c.images_per_identity);
  r.get("d_id", c.d_id);
  r.get("d_attr", c.d_attr);
  r.get("rho", c.rho);
  r.get("landmark_count", c.landmark_count);
  r.get("master_seed", c.master_seed);
  r.finish();
  c.validate();
}

void read_into(const json& j, BlendConfig& c) {
  KeyReader r(j, "blend");
  std::string variant = to_string(c.mask_variant);
  std::string region = to_string(c.color_region);
  r.get("candidate_pool_size", c.candidate_pool_size);
  r.get("mask_variant", variant);
  r.get("blur_sigma", c.blur_sigma);
  r.get("color_region", region);
  r.finish();
  c.mask_variant = parse_mask_variant(variant);
  c.color_region = parse_color_region(region);
  c.validate();
}

void read_into(const json& j, MarginConfig& c) {
  KeyReader r(j, "margin");
  r.get("s", c.s);
  r.get("m", c.m);
  r.get("K", c.K);
  r.finish();
  c.validate();
}

void read_into(const json& j, PretrainConfig& c) {
  KeyReader r(j, "pretrain");
  r.get("p_replace", c.p_replace);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get("momentum", c.momentum);
  r.get("lr_schedule", c.lr_schedule);
  r.get("seed", c.seed);
  if (const json* sub = r.nested("blend")) read_into(*sub, c.blend);
  r.finish();
  c.validate();
}

void read_into(const json& j, LossWeights& c) {
  KeyReader r(j, "losses");
  r.get("lambda1", c.lambda1);
  r.get("lambda2", c.lambda2);
  r.get("lambda3", c.lambda3);
  r.finish();
  c.validate();
}

void AnalysisSettings::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) fail(ErrorCode::kConfig, std::string("analysis.") + what + " must be >= 1");
  };
  positive(anchors_per_identity, "anchors_per_identity");
  positive(heldout_identities - 1, "heldout_identities (at least 2)");
  positive(heldout_images_per_identity - 1, "heldout_images_per_identity (at least 2)");
  positive(verify_pairs / kVerificationFolds, "verify_pairs (at least one per fold)");
  positive(eval_pairs, "eval_pairs");
  positive(loss_pairs, "loss_pairs");
  positive(saliency_images, "saliency_images");
  positive(saliency_stride, "saliency_stride");
  if (preview_index < 0) fail(ErrorCode::kConfig, "analysis.preview_index must be >= 0");
  for (double p : sweep_p)
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::kConfig, "analysis.sweep_p values must lie in [0,1]");
  if (sweep_p.empty()) fail(ErrorCode::kConfig, "analysis.sweep_p must not be empty");
  for (int s : saliency_sizes)
    if (s < 1) fail(ErrorCode::kConfig, "analysis.saliency_sizes must be positive");
}

json to_json(const AnalysisSettings& c) {
  return {{"seed", c.seed},
          {"anchors_per_identity", c.anchors_per_identity},
          {"sweep_p", c.sweep_p},
          {"heldout_identities", c.heldout_identities},
          {"heldout_images_per_identity", c.heldout_images_per_identity},
          {"verify_pairs", c.verify_pairs},
          {"eval_pairs", c.eval_pairs},
          {"loss_pairs", c.loss_pairs},
          {"saliency_images", c.saliency_images},
          {"saliency_sizes", c.saliency_sizes},
          {"saliency_stride", c.saliency_stride},
          {"saliency_fill", c.saliency_fill},
          {"preview_index", c.preview_index}};
}

void read_into(const json& j, AnalysisSettings& c) {
  KeyReader r(j, "analysis");
  r.get("seed", c.seed);
  r.get("anchors_per_identity", c.anchors_per_identity);
  if (const json* v = r.nested("sweep_p")) {
    if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& x) { return x.is_number(); }))
      fail(ErrorCode::kConfig, "analysis.sweep_p: expected an array of numbers");
    c.sweep_p = v->get<std::vector<double>>();
  }
  r.get("heldout_identities", c.heldout_identities);
  r.get("heldout_images_per_identity", c.heldout_images_per_identity);
  r.get("verify_pairs", c.verify_pairs);
  r.get("eval_pairs", c.eval_pairs);
  r.get("loss_pairs", c.loss_pairs);
  r.get("saliency_images", c.saliency_images);
  if (const json* v = r.nested("saliency_sizes")) {
    if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& x) { return x.is_number_integer(); }))
      fail(ErrorCode::kConfig, "analysis.saliency_sizes: expected an array of integers");
    c.saliency_sizes = v->get<std::vector<int>>();
  }
  r.get("saliency_stride", c.saliency_stride);
  r.get("saliency_fill", c.saliency_fill);
  r.get("preview_index", c.preview_index);
  r.finish();
  c.validate();
}

json to_json(const RunConfig& c) {
  json pretrain = to_json(c.pretrain);
  pretrain.erase("blend");
  json losses = to_json(c.losses);
  losses["reduction"] = c.reduction == Reduction::kSum ? "sum" : "mean";
  return {{"seed", c.seed},        {"data", to_json(c.data)},         {"blend", to_json(c.blend)},
          {"margin", to_json(c.margin)}, {"pretrain", pretrain}, {"losses", losses},
          {"analysis", to_json(c.analysis)}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  KeyReader r(j, "config");
  bool seeded = false;
  if (j.contains("seed")) {
    r.get("seed", c.seed);
    seeded = true;
  }
  if (const json* v = r.nested("data")) read_into(*v, c.data);
  if (const json* v = r.nested("blend")) read_into(*v, c.blend);
  bool explicit_k = false;
  if (const json* v = r.nested("margin")) {
    read_into(*v, c.margin);
    explicit_k = v->contains("K");
  }
  if (const json* v = r.nested("pretrain")) {
    if (v->contains("blend")) fail(ErrorCode::kConfig, "pretrain.blend: use the top-level [blend] section");
    read_into(*v, c.pretrain);
  }
  if (const json* v = r.nested("losses")) {
    json w = *v;
    if (auto it = w.find("reduction"); it != w.end()) {
      if (*it == "sum") c.reduction = Reduction::kSum;
      else if (*it == "mean") c.reduction = Reduction::kMean;
      else fail(ErrorCode::kConfig, "losses.reduction must be \"sum\" or \"mean\"");
      w.erase("reduction");
    }
    read_into(w, c.losses);
  }
  if (const json* v = r.nested("analysis")) read_into(*v, c.analysis);
  r.finish();

  if (seeded) {
    c.data.master_seed = c.seed;
    c.pretrain.seed = c.seed;
    c.analysis.seed = c.seed;
  } else {
    c.seed = c.data.master_seed;
  }
  if (!explicit_k) c.margin.K = c.data.num_identities;
  c.pretrain.blend = c.blend;
  c.data.validate();
  c.margin.validate();
  c.pretrain.validate();
  return c;
}

SynthConfig heldout_config(const RunConfig& c) {
  SynthConfig h = c.data;
  h.num_identities = c.analysis.heldout_identities;
  h.images_per_identity = c.analysis.heldout_images_per_identity;
  h.master_seed = derive_seed(c.data.master_seed, {0x4E1D});
  h.validate();
  return h;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kMissingInput, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorCode::kInternal, "short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingInput, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---- dataset shard ----

void save_dataset(const IdentityDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  const SynthConfig& c = ds.config;
  const std::size_t n = ds.samples.size();
  const auto hw = static_cast<std::size_t>(c.image_size) * static_cast<std::size_t>(c.image_size);
  const auto px = hw * static_cast<std::size_t>(c.channels);
  const auto lm = static_cast<std::size_t>(c.landmark_count);
  const auto na = static_cast<std::size_t>(c.d_attr);

  std::vector<float> images(n * px), landmarks(n * lm * 2), masks(n * hw);
  std::vector<std::uint32_t> labels(n);
  std::vector<double> attrs(n * na);
  json index = json::array();
  for (std::size_t k = 0; k < n; ++k) {
    const FaceSample& s = ds.samples[k];
    std::copy(s.image.data.begin(), s.image.data.end(), images.begin() + static_cast<std::ptrdiff_t>(k * px));
    std::copy(s.inner_mask.data.begin(), s.inner_mask.data.end(), masks.begin() + static_cast<std::ptrdiff_t>(k * hw));
    for (std::size_t i = 0; i < lm; ++i) {
      landmarks[(k * lm + i) * 2] = s.landmarks[i].x;
      landmarks[(k * lm + i) * 2 + 1] = s.landmarks[i].y;
    }
    labels[k] = static_cast<std::uint32_t>(s.id_label);
    std::copy(s.z_attr.begin(), s.z_attr.end(), attrs.begin() + static_cast<std::ptrdiff_t>(k * na));
  }
  for (const auto& imgs : ds.by_identity) index.push_back(imgs);

  write_raw<float>(dir / "images.f32", images);
  write_raw<float>(dir / "landmarks.f32", landmarks);
  write_raw<float>(dir / "masks.f32", masks);
  write_raw<std::uint32_t>(dir / "labels.u32", labels);
  write_raw<double>(dir / "attrs.f64", attrs);

  const int s = c.image_size;
  json meta = {
      {"format_version", kShardFormatVersion},
      {"config", to_json(c)},
      {"seed", c.master_seed},
      {"count", n},
      {"byte_order", "little"},
      {"layout", "row-major"},
      {"tensors",
       {{"images.f32", {{"dtype", "f32"}, {"shape", {n, s, s, c.channels}}}},
        {"landmarks.f32", {{"dtype", "f32"}, {"shape", {n, c.landmark_count, 2}}}},
        {"masks.f32", {{"dtype", "f32"}, {"shape", {n, s, s}}}},
        {"labels.u32", {{"dtype", "u32"}, {"shape", {n}}}},
        {"attrs.f64", {{"dtype", "f64"}, {"shape", {n, c.d_attr}}}}}},
      {"sample_index", index},
  };
  write_json(dir / "meta.json", meta);
}

IdentityDataset load_dataset(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path)) fail(ErrorCode::kMissingInput, "no dataset shard at " + dir.string());
  const json meta = read_json(meta_path);
  if (field(meta, "format_version", meta_path) != kShardFormatVersion)
    fail(ErrorCode::kInvariant, meta_path.string() + ": unsupported shard format version");

  IdentityDataset ds;
  read_into(field(meta, "config", meta_path), ds.config);
  const SynthConfig& c = ds.config;
  const std::size_t n = field(meta, "count", meta_path).get<std::size_t>();
  require(n == static_cast<std::size_t>(c.num_identities) * static_cast<std::size_t>(c.images_per_identity),
          meta_path.string() + ": count disagrees with the config");
  const auto s = static_cast<std::size_t>(c.image_size);
  const std::size_t hw = s * s;
  const std::size_t px = hw * static_cast<std::size_t>(c.channels);
  const auto lm = static_cast<std::size_t>(c.landmark_count);
  const auto na = static_cast<std::size_t>(c.d_attr);

  const auto images = read_raw<float>(dir / "images.f32", n * px);
  const auto landmarks = read_raw<float>(dir / "landmarks.f32", n * lm * 2);
  const auto masks = read_raw<float>(dir / "masks.f32", n * hw);
  const auto labels = read_raw<std::uint32_t>(dir / "labels.u32", n);
  const auto attrs = read_raw<double>(dir / "attrs.f64", n * na);

  ds.samples.resize(n);
  ds.by_identity.assign(static_cast<std::size_t>(c.num_identities), {});
  for (std::size_t k = 0; k < n; ++k) {
    FaceSample& f = ds.samples[k];
    f.image = Image(c.image_size, c.image_size, c.channels);
    std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(k * px), px, f.image.data.begin());
    f.inner_mask = Mask(c.image_size, c.image_size, 1);
    std::copy_n(masks.begin() + static_cast<std::ptrdiff_t>(k * hw), hw, f.inner_mask.data.begin());
    f.landmarks.resize(lm);
    for (std::size_t i = 0; i < lm; ++i) f.landmarks[i] = {landmarks[(k * lm + i) * 2], landmarks[(k * lm + i) * 2 + 1]};
    require(labels[k] < static_cast<std::uint32_t>(c.num_identities), "dataset label out of range");
    f.id_label = static_cast<int>(labels[k]);
    f.z_attr.assign(attrs.begin() + static_cast<std::ptrdiff_t>(k * na),
                    attrs.begin() + static_cast<std::ptrdiff_t>((k + 1) * na));
    ds.by_identity[labels[k]].push_back(k);
  }
  const json& index = field(meta, "sample_index", meta_path);
  require(index == json(ds.by_identity), meta_path.string() + ": sample index disagrees with labels.u32");
  ds.validate();
  return ds;
}

// ---- checkpoint ----

namespace {

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,loss,accuracy,replaced,seen\n";
  for (const EpochLog& l : log)
    out += std::to_string(l.epoch) + "," + format_number(l.loss) + "," + format_number(l.accuracy) + "," +
           std::to_string(l.replaced) + "," + std::to_string(l.seen) + "\n";
  return out;
}

}  // namespace

void save_checkpoint(const EncoderCheckpoint& ck, const fs::path& dir) {
  fs::create_directories(dir);
  const EncoderShape& sh = ck.params.shape;
  json tensors = json::array();
  std::vector<float> weights;
  for (const auto& [name, t] : ck.params.tensors()) {
    tensors.push_back({{"name", name}, {"shape", t->shape}});
    weights.insert(weights.end(), t->data.begin(), t->data.end());
  }
  json log = json::array();
  for (const EpochLog& l : ck.training_log) log.push_back(to_json(l));
  json model = {
      {"format_version", kCheckpointFormatVersion},
      {"architecture",
       {{"image_size", sh.image_size},
        {"channels", sh.channels},
        {"conv1_filters", EncoderShape::kConv1Filters},
        {"conv2_filters", EncoderShape::kConv2Filters},
        {"d_emb", sh.d_emb},
        {"K", sh.num_classes}}},
      {"tensors", tensors},
      {"weights_dtype", "f32"},
      {"pretrain", to_json(ck.pretrain_cfg)},
      {"margin", to_json(ck.margin_cfg)},
      {"data", to_json(ck.data_cfg)},
      {"clean_train_accuracy", ck.clean_train_accuracy},
      {"training_log", log},
  };
  write_raw<float>(dir / "weights.f32", weights);
  write_json(dir / "model.json", model);
  write_text(dir / "training_log.csv", training_log_csv(ck.training_log));
}

EncoderCheckpoint load_checkpoint(const fs::path& dir) {
  const fs::path model_path = dir / "model.json";
  if (!fs::exists(model_path)) fail(ErrorCode::kMissingInput, "no checkpoint at " + dir.string());
  const json model = read_json(model_path);
  if (field(model, "format_version", model_path) != kCheckpointFormatVersion)
    fail(ErrorCode::kInvariant, model_path.string() + ": unsupported checkpoint format version");

  EncoderCheckpoint ck;
  const json& arch = field(model, "architecture", model_path);
  EncoderShape sh;
  sh.image_size = field(arch, "image_size", model_path).get<int>();
  sh.channels = field(arch, "channels", model_path).get<int>();
  sh.d_emb = field(arch, "d_emb", model_path).get<int>();
  sh.num_classes = field(arch, "K", model_path).get<int>();
  require(field(arch, "conv1_filters", model_path) == EncoderShape::kConv1Filters &&
              field(arch, "conv2_filters", model_path) == EncoderShape::kConv2Filters,
          model_path.string() + ": architecture does not match this build");
  sh.validate();
  ck.params = EncoderParams<float>::zeros(sh);

  const json& tensors = field(model, "tensors", model_path);
  auto slots = ck.params.tensors();
  require(tensors.is_array() && tensors.size() == slots.size(), model_path.string() + ": tensor list mismatch");
  std::size_t total = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    require(tensors[i].at("name") == slots[i].first && tensors[i].at("shape") == json(slots[i].second->shape),
            model_path.string() + ": tensor '" + slots[i].first + "' does not match the architecture");
    total += slots[i].second->numel();
  }
  const auto weights = read_raw<float>(dir / "weights.f32", total);
  std::size_t off = 0;
  for (auto& [name, t] : slots) {
    std::copy_n(weights.begin() + static_cast<std::ptrdiff_t>(off), t->numel(), t->data.begin());
    off += t->numel();
  }
  require(ck.params.all_finite(), "checkpoint contains non-finite weights");

  read_into(field(model, "pretrain", model_path), ck.pretrain_cfg);
  read_into(field(model, "margin", model_path), ck.margin_cfg);
  read_into(field(model, "data", model_path), ck.data_cfg);
  ck.clean_train_accuracy = field(model, "clean_train_accuracy", model_path).get<double>();
  for (const json& l : field(model, "training_log", model_path))
    ck.training_log.push_back({l.at("epoch").get<int>(), l.at("loss").get<double>(), l.at("accuracy").get<double>(),
                               l.at("replaced").get<std::size_t>(), l.at("seen").get<std::size_t>()});
  return ck;
}

// ---- hashing and manifests ----

std::string sha256_hex(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingInput, "cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1, "sha256 init failed",
          ErrorCode::kInternal);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config, std::uint64_t seed) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) {
      fs::path rel = fs::relative(e.path(), dir);
      if (rel != "manifest.json") files.push_back(rel);
    }
  std::sort(files.begin(), files.end());
  json artifacts = json::object();
  for (const fs::path& f : files) artifacts[f.generic_string()] = sha256_hex(dir / f);
  write_json(dir / "manifest.json", {{"tool_version", kToolVersion},
                                     {"command", command},
                                     {"seed", seed},
                                     {"config", config},
                                     {"artifacts", artifacts}});
}

// ---- reports ----

json to_json(const EpochLog& l) {
  return {{"epoch", l.epoch}, {"loss", l.loss}, {"accuracy", l.accuracy}, {"replaced", l.replaced}, {"seen", l.seen}};
}

json to_json(const DistributionReport& r) {
  auto pop = [](const PopulationStats& s, std::size_t n, const Histogram& h) {
    return json{{"count", n}, {"mean", s.mean}, {"stddev", s.stddev}, {"histogram", h.counts}};
  };
  return {{"same", pop(r.same, r.sims_same.size(), r.hist_same)},
          {"swapped", pop(r.swapped, r.sims_swapped.size(), r.hist_swapped)},
          {"closest", pop(r.closest, r.sims_closest.size(), r.hist_closest)},
          {"histogram_bins", kHistogramBins},
          {"histogram_range", {-1.0, 1.0}},
          {"gap", r.gap},
          {"overlap", r.overlap}};
}

json to_json(const MetricTable& t) {
  json rows = json::array();
  for (const MetricRow& r : t.rows)
    rows.push_back({{"encoder", r.encoder},
                    {"id_distance", r.id_distance},
                    {"id_distance_relative", r.id_distance_relative},
                    {"attr_distance", r.attr_distance},
                    {"attr_distance_relative", r.attr_distance_relative}});
  return {{"pairs", t.pairs}, {"rows", rows}};
}

json to_json(const LossReport& r) {
  return {{"id", r.components.id_loss},
          {"mask", r.components.mask_loss},
          {"rec", r.components.rec_loss},
          {"cyc", r.components.cyc_loss},
          {"adversarial_included", r.adversarial_included},
          {"total", r.total}};
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_distribution_csv(const fs::path& path, const DistributionReport& r) {
  std::string out = "population,similarity\n";
  auto add = [&](const char* name, const std::vector<double>& v) {
    for (double x : v) out += std::string(name) + "," + format_number(x) + "\n";
  };
  add("same", r.sims_same);
  add("swapped", r.sims_swapped);
  add("closest", r.sims_closest);
  write_text(path, out);
}

void write_histogram_csv(const fs::path& path, const DistributionReport& r) {
  std::string out = "bin_center same swapped closest\n";
  for (int b = 0; b < kHistogramBins; ++b) {
    const auto i = static_cast<std::size_t>(b);
    out += format_number(-1.0 + 0.02 * (b + 0.5)) + " " + std::to_string(r.hist_same.counts[i]) + " " +
           std::to_string(r.hist_swapped.counts[i]) + " " + std::to_string(r.hist_closest.counts[i]) + "\n";
  }
  write_text(path, out);
}

void write_saliency_csv(const fs::path& path, const SaliencyMap& m) {
  std::string out;
  for (int y = 0; y < m.values.height; ++y) {
    for (int x = 0; x < m.values.width; ++x) {
      if (x) out += ",";
      out += format_number(m.values.at(y, x, 0));
    }
    out += "\n";
  }
  write_text(path, out);
}

}  // namespace blendlab
