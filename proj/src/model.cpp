#include "mpec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "binary_io.hpp"
#include "file_util.hpp"
#include "mpec/errors.hpp"
#include "mpec/rng.hpp"

namespace mpec::model {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;
constexpr std::size_t kNone = static_cast<std::size_t>(-1);

Tensor he_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor w(fan_in, fan_out);
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

Var linear(const num::BoundParameters& p, Var x, const std::string& weight,
           const std::string& bias) {
  return num::add_bias(num::matmul(x, p[weight]), p[bias]);
}

}  // namespace

void ModelConfig::validate() const {
  if (encoder.hidden == 0 || encoder.out_dim == 0 || adapter.hidden == 0 ||
      adapter.out_dim == 0) {
    throw ValidationError("model dimensions must be positive");
  }
  if (encoder.k < 1) throw ValidationError("encoder k must be >= 1");
}

std::string block_weight(std::size_t b) { return "encoder.block" + std::to_string(b) + ".weight"; }
std::string block_bias(std::size_t b) { return "encoder.block" + std::to_string(b) + ".bias"; }

ParameterSet init_params(const ModelConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.init_seed, {0x1417}));
  const std::size_t h = config.encoder.hidden;
  ParameterSet p;
  p.add(kInputWeight, he_uniform(rng, 6, h));
  p.add(kInputBias, Tensor(1, h));
  for (std::size_t b = 0; b < config.encoder.blocks; ++b) {
    p.add(block_weight(b), he_uniform(rng, 2 * h, h));
    p.add(block_bias(b), Tensor(1, h));
  }
  p.add(kHeadWeight, he_uniform(rng, h, config.encoder.out_dim));
  p.add(kHeadBias, Tensor(1, config.encoder.out_dim));
  p.add(kMaskToken, Tensor(1, 3));
  p.add(kAdapterWeight1, he_uniform(rng, config.encoder.out_dim, config.adapter.hidden));
  p.add(kAdapterBias1, Tensor(1, config.adapter.hidden));
  p.add(kAdapterWeight2, he_uniform(rng, config.adapter.hidden, config.adapter.out_dim));
  p.add(kAdapterBias2, Tensor(1, config.adapter.out_dim));
  return p;
}

Neighborhoods knn_neighborhoods(std::span<const scene::Vec3> points, std::size_t k,
                                std::span<const std::size_t> keys) {
  const std::size_t n = points.size();
  if (keys.size() != n) throw ValidationError("knn: key count differs from point count");
  Neighborhoods nb;
  nb.offsets.reserve(n + 1);
  nb.indices.reserve(n * (std::min(k, n ? n - 1 : 0) + 1));
  const std::size_t take = n == 0 ? 0 : std::min(k, n - 1);
  struct Cand {
    double d2;
    std::size_t key;
    std::size_t idx;
  };
  auto less = [](const Cand& a, const Cand& b) {
    return a.d2 < b.d2 || (a.d2 == b.d2 && a.key < b.key);
  };
  std::vector<Cand> cand;
  cand.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    const auto& pi = points[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = points[j][0] - pi[0], dy = points[j][1] - pi[1],
                   dz = points[j][2] - pi[2];
      cand.push_back({dx * dx + dy * dy + dz * dz, keys[j], j});
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take),
                      cand.end(), less);
    nb.indices.push_back(i);
    for (std::size_t t = 0; t < take; ++t) nb.indices.push_back(cand[t].idx);
    nb.offsets.push_back(nb.indices.size());
  }
  return nb;
}

Var encode_view(const num::BoundParameters& params, const ModelConfig& config,
                const pipeline::View& view) {
  const std::size_t n = view.size();
  if (n == 0) throw ValidationError("encode_view: empty view");
  num::Tape& tape = params.vars().front().tape();

  Tensor coords(n, 3), kept_colors(n, 3), mask_col(n, 1);
  bool any_masked = false;
  for (std::size_t i = 0; i < n; ++i) {
    const bool masked = view.masked_flags[i] != 0;
    any_masked = any_masked || masked;
    mask_col(i, 0) = masked ? 1.0 : 0.0;
    for (int a = 0; a < 3; ++a) {
      coords(i, a) = view.points[i][a];
      kept_colors(i, a) = masked ? 0.0 : view.colors[i][a];
    }
  }
  Var colors = tape.constant(std::move(kept_colors));
  if (any_masked) {
    // Masked rows receive the token, others keep their color.
    colors = num::add(colors, num::matmul(tape.constant(std::move(mask_col)), params[kMaskToken]));
  }
  const Var input = num::concat_cols(tape.constant(std::move(coords)), colors);

  Var h = num::relu(linear(params, input, kInputWeight, kInputBias));
  if (config.encoder.blocks > 0) {
    const Neighborhoods nbrs =
        knn_neighborhoods(view.points, config.encoder.k, view.origin_index);
    for (std::size_t b = 0; b < config.encoder.blocks; ++b) {
      const Var ctx = num::concat_cols(num::neighbor_mean(h, nbrs), h);
      h = num::relu(linear(params, ctx, block_weight(b), block_bias(b)));
    }
  }
  return linear(params, h, kHeadWeight, kHeadBias);
}

MergedFeatures merge_features(Var features_u, Var features_v, const pipeline::ViewPair& pair) {
  std::size_t max_origin = 0;
  for (std::size_t o : pair.u.origin_index) max_origin = std::max(max_origin, o);
  for (std::size_t o : pair.v.origin_index) max_origin = std::max(max_origin, o);
  std::vector<std::size_t> pos_u(max_origin + 1, kNone), pos_v(max_origin + 1, kNone);
  for (std::size_t i = 0; i < pair.u.size(); ++i) pos_u[pair.u.origin_index[i]] = i;
  for (std::size_t j = 0; j < pair.v.size(); ++j) pos_v[pair.v.origin_index[j]] = j;

  MergedFeatures m;
  std::vector<std::pair<long, long>> rows;
  for (std::size_t o = 0; o <= max_origin; ++o) {
    const std::size_t i = pos_u[o], j = pos_v[o];
    if (i == kNone && j == kNone) continue;
    rows.emplace_back(i == kNone ? -1L : static_cast<long>(i),
                      j == kNone ? -1L : static_cast<long>(j));
    m.origin_index.push_back(o);
    m.entity_mask.push_back(i != kNone ? pair.u.entity_mask[i] : pair.v.entity_mask[j]);
  }
  m.features = num::row_pair_mean(features_u, features_v, rows);
  return m;
}

Var project_vl(const num::BoundParameters& params, Var features) {
  const Var hidden = num::relu(linear(params, features, kAdapterWeight1, kAdapterBias1));
  return linear(params, hidden, kAdapterWeight2, kAdapterBias2);
}

Tensor encode_inference(const scene::Scene& scene, const ParameterSet& params,
                        const ModelConfig& config) {
  num::Tape tape;
  const num::BoundParameters bound(tape, params, /*trainable=*/false);
  const pipeline::View view = pipeline::identity_view(scene);
  return project_vl(bound, encode_view(bound, config, view)).value();
}

// ---- checkpoint -----------------------------------------------------------

std::string config_hash(const json& config) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(detail::fnv1a(config.dump())));
  return buf;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  json header = ckpt.meta.is_object() ? ckpt.meta : json::object();
  for (const char* reserved : {"version", "tensors", "config_hash"}) {
    if (header.contains(reserved)) {
      throw ValidationError(std::string("checkpoint meta uses reserved key ") + reserved);
    }
  }
  header["version"] = kCheckpointVersion;
  header["config_hash"] = ckpt.config_hash;
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& p : ckpt.tensors.items()) {
    entries.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += p.value.size() * 8;
  }
  header["tensors"] = entries;
  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + offset);
  for (const auto& p : ckpt.tensors.items()) {
    for (double v : p.value.data()) detail::put_f64(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos) throw IoError("malformed checkpoint: missing header line");
  Checkpoint ckpt;
  try {
    json header = json::parse(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(nl));
    if (header.at("version").get<int>() != kCheckpointVersion) {
      throw IoError("checkpoint version mismatch");
    }
    ckpt.config_hash = header.at("config_hash").get<std::string>();
    const std::size_t base = nl + 1;
    for (const json& e : header.at("tensors")) {
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      const auto offset = e.at("offset").get<std::size_t>();
      if (shape.size() != 2) throw IoError("checkpoint tensor must be rank 2");
      const std::size_t count = shape[0] * shape[1];
      if (base + offset + count * 8 > bytes.size()) {
        throw IoError("truncated checkpoint: tensor " + e.at("name").get<std::string>() +
                      " extends past byte offset " + std::to_string(bytes.size()));
      }
      Tensor t(shape[0], shape[1]);
      const char* p = bytes.data() + base + offset;
      for (std::size_t i = 0; i < count; ++i) t.data()[i] = detail::get_f64(p + 8 * i);
      ckpt.tensors.add(e.at("name").get<std::string>(), std::move(t));
    }
    header.erase("version");
    header.erase("config_hash");
    header.erase("tensors");
    ckpt.meta = std::move(header);
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  // Write-then-rename keeps the previous checkpoint intact on failure.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  detail::write_file(tmp, encode_checkpoint(ckpt));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace mpec::model
