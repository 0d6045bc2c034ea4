#include "hcb/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace hcb {

using nlohmann::json;

std::string arch_name(ArchId a) {
  switch (a) {
    case ArchId::cnn3x2: return "cnn3x2";
    case ArchId::cnn_shallow: return "cnn_shallow";
  }
  return "cnn3x2";
}

ArchId arch_from_name(const std::string& name) {
  if (name == "cnn3x2") return ArchId::cnn3x2;
  if (name == "cnn_shallow") return ArchId::cnn_shallow;
  throw ValidationError("unknown architecture: " + name);
}

namespace {

template <typename S>
void kaiming_init(nn::Network<S>& net, uint64_t seed) {
  Rng rng(seed);
  for (auto& lv : net.layers()) {
    if (auto* conv = std::get_if<nn::Conv<S>>(&lv)) {
      const double limit = std::sqrt(6.0 / double(conv->k * conv->k * conv->in_c));
      for (Eigen::Index i = 0; i < conv->W.size(); ++i)
        conv->W.data()[i] = static_cast<S>(rng.range(-limit, limit));
    } else if (auto* dense = std::get_if<nn::Dense<S>>(&lv)) {
      const double limit = std::sqrt(6.0 / double(dense->in));
      for (Eigen::Index i = 0; i < dense->W.size(); ++i)
        dense->W.data()[i] = static_cast<S>(rng.range(-limit, limit));
    }
  }
}

}  // namespace

template <typename S>
nn::Network<S> make_network(const ModelSpec& spec, uint64_t init_seed) {
  const int h = spec.height, w = spec.width, c = spec.channels;
  const int k = spec.num_classes;
  if (h < 1 || w < 1 || c < 1 || k < 2) {
    throw ValidationError("model spec has degenerate input shape or class count");
  }
  nn::Network<S> net(h * w * c, k);
  if (spec.arch == ArchId::cnn3x2) {
    nn::Conv<S> c1(h, w, c, 3, 32);
    nn::MaxPool2<S> p1(c1.out_h, c1.out_w, 32);
    nn::Conv<S> c2(p1.out_h, p1.out_w, 32, 3, 64);
    nn::MaxPool2<S> p2(c2.out_h, c2.out_w, 64);
    nn::Conv<S> c3(p2.out_h, p2.out_w, 64, 3, 64);
    const int d1 = c1.out_dim(), d2 = c2.out_dim(), flat = c3.out_dim();
    net.add(std::move(c1));
    net.add(nn::Relu<S>(d1));
    net.add(std::move(p1));
    net.add(std::move(c2));
    net.add(nn::Relu<S>(d2));
    net.add(std::move(p2));
    net.add(std::move(c3));
    net.add(nn::Relu<S>(flat));
    net.add(nn::Dense<S>(flat, 128));
    net.add(nn::Relu<S>(128));
    net.add(nn::Dense<S>(128, k));
  } else {
    nn::Conv<S> c1(h, w, c, 3, 8);
    nn::MaxPool2<S> p1(c1.out_h, c1.out_w, 8);
    nn::Conv<S> c2(p1.out_h, p1.out_w, 8, 3, 16);
    const int d1 = c1.out_dim(), d2 = c2.out_dim();
    net.add(std::move(c1));
    net.add(nn::Relu<S>(d1));
    net.add(std::move(p1));
    net.add(std::move(c2));
    net.add(nn::Relu<S>(d2));
    net.add(nn::Dense<S>(d2, 64));
    net.add(nn::Relu<S>(64));
    net.add(nn::Dense<S>(64, k));
  }
  kaiming_init(net, init_seed);
  return net;
}

template nn::Network<float> make_network<float>(const ModelSpec&, uint64_t);
template nn::Network<double> make_network<double>(const ModelSpec&, uint64_t);

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'H', 'C', 'B', 'W'};
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "weights.bin").string());
    out.write(kMagic, 4);
    const uint32_t version = static_cast<uint32_t>(ck.meta.format_version);
    const uint64_t count = ck.params.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(ck.params.data()),
              static_cast<std::streamsize>(sizeof(float) * ck.params.size()));
  }
  json meta;
  meta["arch_id"] = arch_name(ck.spec.arch);
  meta["input_shape"] = {ck.spec.height, ck.spec.width, ck.spec.channels};
  meta["num_classes"] = ck.spec.num_classes;
  meta["seed"] = ck.meta.seed;
  meta["config_sha256"] = ck.meta.config_digest;
  meta["epochs"] = ck.meta.epochs;
  meta["phase"] = ck.meta.phase;
  meta["format_version"] = ck.meta.format_version;
  std::ofstream mf(dir / "metadata.json", std::ios::trunc);
  mf << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint ck;
  {
    std::ifstream in(dir / "weights.bin", std::ios::binary);
    if (!in) throw ParseError("cannot open " + (dir / "weights.bin").string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
      throw ParseError((dir / "weights.bin").string() + ": bad magic");
    }
    uint32_t version = 0;
    uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in) throw ParseError((dir / "weights.bin").string() + ": truncated header");
    ck.params.resize(count);
    if (!in.read(reinterpret_cast<char*>(ck.params.data()),
                 static_cast<std::streamsize>(sizeof(float) * count))) {
      throw ParseError((dir / "weights.bin").string() + ": truncated payload");
    }
    ck.meta.format_version = static_cast<int>(version);
  }
  std::ifstream mf(dir / "metadata.json");
  if (!mf) throw ParseError("cannot open " + (dir / "metadata.json").string());
  json meta;
  mf >> meta;
  ck.spec.arch = arch_from_name(meta.at("arch_id").get<std::string>());
  ck.spec.height = meta.at("input_shape").at(0).get<int>();
  ck.spec.width = meta.at("input_shape").at(1).get<int>();
  ck.spec.channels = meta.at("input_shape").at(2).get<int>();
  ck.spec.num_classes = meta.at("num_classes").get<int>();
  ck.meta.seed = meta.at("seed").get<uint64_t>();
  ck.meta.config_digest = meta.at("config_sha256").get<std::string>();
  ck.meta.epochs = meta.at("epochs").get<int>();
  ck.meta.phase = meta.at("phase").get<std::string>();
  return ck;
}

nn::Network<float> to_network(const Checkpoint& ck) {
  nn::Network<float> net = make_network<float>(ck.spec, 0);
  net.set_params(ck.params);
  return net;
}

Checkpoint make_checkpoint(nn::Network<float>& net, const ModelSpec& spec,
                           const CheckpointMeta& meta) {
  Checkpoint ck;
  ck.spec = spec;
  ck.params = net.get_params();
  ck.meta = meta;
  return ck;
}

}  // namespace hcb
