#include "regrelax/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "regrelax/common/hash.hpp"

namespace regrelax::model {
namespace {

constexpr std::string_view kMagic = "RGRLXCKP";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint: truncated file");
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t uint(int width) {
    const std::string_view s = take(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = width - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Transformer& model) {
  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  const std::string cfg = model.config().to_text();
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;

  std::uint32_t count = 0;
  model.params().for_each([&](const std::string&, const nn::Tensor&) { ++count; });
  put_u32(out, count);
  model.params().for_each([&](const std::string& name, const nn::Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) put_u64(out, dim);
    for (nn::Real v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  });
  return out;
}

Transformer parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw CheckpointError("checkpoint: bad magic");
  const auto version = static_cast<std::uint32_t>(r.uint(4));
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto cfg_len = static_cast<std::size_t>(r.uint(4));
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(std::string(r.take(cfg_len)));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }

  std::map<std::string, nn::Tensor> tensors;
  const auto count = r.uint(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name(r.take(static_cast<std::size_t>(r.uint(4))));
    const auto rank = static_cast<std::size_t>(r.uint(4));
    if (rank == 0 || rank > 2) throw CheckpointError("checkpoint: bad rank for " + name);
    nn::Shape shape;
    for (std::size_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.uint(8)));
    std::vector<nn::Real> data(nn::shape_numel(shape));
    for (nn::Real& v : data) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
    tensors.emplace(name, nn::Tensor(shape, std::move(data)));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");

  ModelParams params = ModelParams::zeros(cfg);
  std::size_t seen = 0;
  params.for_each([&](const std::string& name, nn::Tensor& t) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint: missing tensor " + name);
    if (it->second.shape() != t.shape()) {
      throw CheckpointError("checkpoint: tensor " + name + " has shape " +
                            nn::shape_str(it->second.shape()) + ", expected " +
                            nn::shape_str(t.shape()));
    }
    t = std::move(it->second);
    ++seen;
  });
  if (seen != tensors.size()) throw CheckpointError("checkpoint: unexpected extra tensors");
  return Transformer(cfg, std::move(params));
}

void save_checkpoint(const Transformer& model, const std::filesystem::path& file) {
  const std::string bytes = serialize_checkpoint(model);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot write " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Transformer load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + file.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

std::string checkpoint_hash(const Transformer& model) {
  return hex64(fnv1a64(serialize_checkpoint(model)));
}

}  // namespace regrelax::model
