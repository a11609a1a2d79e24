#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cmvf/errors.hpp"
#include "cmvf/trainer.hpp"

// Checkpoint container:
//   "CMVFCKPT" | u32 version | u64 manifest size | manifest JSON |
//   raw float64 arrays (little-endian, manifest order) | u64 FNV-1a trailer
// The trailer hashes every preceding byte.

namespace cmvf {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'C', 'M', 'V', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t byteswap64(std::uint64_t v) {
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
  return r;
}

std::uint64_t to_le64(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return byteswap64(v);
  return v;
}

void append_u32(std::string& buf, std::uint32_t v) {
  std::uint64_t le = to_le64(v);
  buf.append(reinterpret_cast<const char*>(&le), 4);
}

void append_u64(std::string& buf, std::uint64_t v) {
  std::uint64_t le = to_le64(v);
  buf.append(reinterpret_cast<const char*>(&le), 8);
}

void append_f64(std::string& buf, double v) { append_u64(buf, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t read_u64(const std::string& buf, std::size_t offset) {
  std::uint64_t v = 0;
  std::memcpy(&v, buf.data() + offset, 8);
  return to_le64(v);
}

std::uint32_t read_u32(const std::string& buf, std::size_t offset) {
  std::uint64_t v = 0;
  std::memcpy(&v, buf.data() + offset, 4);
  return static_cast<std::uint32_t>(to_le64(v) & 0xffffffffULL);
}

double read_f64(const std::string& buf, std::size_t offset) {
  return std::bit_cast<double>(read_u64(buf, offset));
}

std::uint64_t fnv1a64(const std::string& buf, std::size_t len) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (std::size_t i = 0; i < len; ++i) {
    hash ^= static_cast<unsigned char>(buf[i]);
    hash *= 1099511628211ULL;
  }
  return hash;
}

json config_to_json(const TrainConfig& c) {
  return json{{"embedding_dim", c.embedding_dim},
              {"capsule_count", c.capsule_count},
              {"routing_iterations", c.routing_iterations},
              {"alpha", c.alpha},
              {"mc_samples", c.mc_samples},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"seed", c.seed},
              {"variant", variant_name(c.variant)},
              {"membership", c.membership == MembershipMode::norm ? "norm" : "softmax"},
              {"valid_fraction", c.valid_fraction}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.capsule_count = j.at("capsule_count").get<std::size_t>();
  c.routing_iterations = j.at("routing_iterations").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.mc_samples = j.at("mc_samples").get<int>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.membership = j.at("membership").get<std::string>() == "softmax" ? MembershipMode::softmax
                                                                    : MembershipMode::norm;
  c.valid_fraction = j.at("valid_fraction").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  auto params = checkpoint.params.entries();
  if (checkpoint.optimizer.first_moment.size() != params.size() ||
      checkpoint.optimizer.second_moment.size() != params.size()) {
    throw ValidationError("save_checkpoint: optimizer state does not match parameters");
  }

  json arrays = json::array();
  std::uint64_t offset = 0;  // bytes from the start of the data blob
  auto describe = [&](const std::string& name, const Array& a) {
    arrays.push_back({{"name", name}, {"shape", a.shape()}, {"offset", offset}});
    offset += a.size() * sizeof(double);
  };
  for (std::size_t i = 0; i < params.size(); ++i) describe("param." + params[i].first, *params[i].second);
  for (std::size_t i = 0; i < params.size(); ++i) {
    describe("adam_m." + params[i].first, checkpoint.optimizer.first_moment[i]);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    describe("adam_v." + params[i].first, checkpoint.optimizer.second_moment[i]);
  }

  json history = json::array();
  for (const EpochStats& e : checkpoint.history) {
    history.push_back({{"epoch", e.epoch},
                       {"reconstruction", e.loss.reconstruction},
                       {"kl_student_mode", e.loss.kl_student_mode},
                       {"kl_question_concept", e.loss.kl_question_concept},
                       {"kl_std_normal", e.loss.kl_std_normal},
                       {"total", e.loss.total},
                       {"valid_auc", e.valid_auc},
                       {"is_best", e.is_best}});
  }

  json manifest{{"dims",
                 {{"students", checkpoint.params.dims.students},
                  {"questions", checkpoint.params.dims.questions},
                  {"concepts", checkpoint.params.dims.concepts},
                  {"embedding", checkpoint.params.dims.embedding},
                  {"capsules", checkpoint.params.dims.capsules}}},
                {"config", config_to_json(checkpoint.config)},
                {"epoch", checkpoint.epoch},
                {"best_auc", checkpoint.best_auc},
                {"best_epoch", checkpoint.best_epoch},
                {"optimizer_steps", checkpoint.optimizer.step_count},
                {"history", history},
                {"arrays", arrays}};
  std::string manifest_text = manifest.dump();

  std::string buf;
  buf.reserve(manifest_text.size() + offset + 64);
  buf.append(kMagic, sizeof(kMagic));
  append_u32(buf, kVersion);
  append_u64(buf, manifest_text.size());
  buf.append(manifest_text);
  auto write_array = [&](const Array& a) {
    for (std::size_t i = 0; i < a.size(); ++i) append_f64(buf, a[i]);
  };
  for (std::size_t i = 0; i < params.size(); ++i) write_array(*params[i].second);
  for (const Array& a : checkpoint.optimizer.first_moment) write_array(a);
  for (const Array& a : checkpoint.optimizer.second_moment) write_array(a);
  append_u64(buf, fnv1a64(buf, buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed while writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof(kMagic) + 4 + 8 + 8) {
    throw IoError("checkpoint '" + path + "' is truncated");
  }
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("'" + path + "' is not a checkpoint file");
  }
  std::uint32_t version = read_u32(buf, 8);
  if (version != kVersion) {
    throw IoError("checkpoint '" + path + "' has format version " + std::to_string(version) +
                  ", this build reads version " + std::to_string(kVersion));
  }
  std::uint64_t stored_hash = read_u64(buf, buf.size() - 8);
  if (stored_hash != fnv1a64(buf, buf.size() - 8)) {
    throw IoError("checkpoint '" + path + "' failed its integrity check");
  }

  std::uint64_t manifest_len = read_u64(buf, 12);
  std::size_t manifest_start = 12 + 8;
  if (manifest_start + manifest_len + 8 > buf.size()) {
    throw IoError("checkpoint '" + path + "' is truncated");
  }
  json manifest;
  try {
    manifest = json::parse(buf.substr(manifest_start, manifest_len));
  } catch (const json::exception& e) {
    throw IoError("checkpoint '" + path + "' has a corrupt manifest: " + e.what());
  }

  Checkpoint c;
  try {
    const json& dims_j = manifest.at("dims");
    ModelDims dims{dims_j.at("students").get<std::size_t>(),
                   dims_j.at("questions").get<std::size_t>(),
                   dims_j.at("concepts").get<std::size_t>(),
                   dims_j.at("embedding").get<std::size_t>(),
                   dims_j.at("capsules").get<std::size_t>()};
    c.params = allocate_params(dims);
    c.config = config_from_json(manifest.at("config"));
    c.epoch = manifest.at("epoch").get<int>();
    c.best_auc = manifest.at("best_auc").get<double>();
    c.best_epoch = manifest.at("best_epoch").get<int>();
    c.optimizer = init_optimizer(c.params);
    c.optimizer.step_count = manifest.at("optimizer_steps").get<std::int64_t>();
    for (const json& e : manifest.at("history")) {
      EpochStats s;
      s.epoch = e.at("epoch").get<int>();
      s.loss.reconstruction = e.at("reconstruction").get<double>();
      s.loss.kl_student_mode = e.at("kl_student_mode").get<double>();
      s.loss.kl_question_concept = e.at("kl_question_concept").get<double>();
      s.loss.kl_std_normal = e.at("kl_std_normal").get<double>();
      s.loss.total = e.at("total").get<double>();
      s.valid_auc = e.at("valid_auc").get<double>();
      s.is_best = e.at("is_best").get<bool>();
      c.history.push_back(s);
    }

    auto params = c.params.entries();
    std::size_t data_start = manifest_start + manifest_len;
    std::size_t data_bytes = buf.size() - 8 - data_start;
    auto read_array = [&](const json& entry, Array& target, const std::string& name) {
      Shape shape = entry.at("shape").get<Shape>();
      if (shape != target.shape()) {
        throw IoError("checkpoint '" + path + "': array '" + name + "' has shape " +
                      shape_str(shape) + ", expected " + shape_str(target.shape()));
      }
      std::uint64_t off = entry.at("offset").get<std::uint64_t>();
      if (off + target.size() * sizeof(double) > data_bytes) {
        throw IoError("checkpoint '" + path + "' is truncated in '" + name + "'");
      }
      for (std::size_t i = 0; i < target.size(); ++i) {
        target[i] = read_f64(buf, data_start + off + i * 8);
      }
    };

    std::size_t matched = 0;
    for (const json& entry : manifest.at("arrays")) {
      std::string name = entry.at("name").get<std::string>();
      bool found = false;
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (name == "param." + params[i].first) {
          read_array(entry, *params[i].second, name);
          found = true;
        } else if (name == "adam_m." + params[i].first) {
          read_array(entry, c.optimizer.first_moment[i], name);
          found = true;
        } else if (name == "adam_v." + params[i].first) {
          read_array(entry, c.optimizer.second_moment[i], name);
          found = true;
        }
        if (found) break;
      }
      if (!found) throw IoError("checkpoint '" + path + "' names unknown array '" + name + "'");
      ++matched;
    }
    if (matched != 3 * params.size()) {
      throw IoError("checkpoint '" + path + "' is missing arrays (" + std::to_string(matched) +
                    " of " + std::to_string(3 * params.size()) + ")");
    }
  } catch (const json::exception& e) {
    throw IoError("checkpoint '" + path + "' has a corrupt manifest: " + e.what());
  }
  return c;
}

}  // namespace cmvf
