#include "rgpl/encoder.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace rgpl {

namespace {

constexpr char kMagic[8] = {'R', 'G', 'P', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw Error("truncated checkpoint " + path);
  return value;
}

void read_doubles(std::istream& in, double* dst, Index count, const std::string& path) {
  if (!in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * sizeof(double)))) {
    throw Error("truncated checkpoint " + path);
  }
}

}  // namespace

std::string params_hash(const EncoderParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::int64_t dims[3] = {params.vocab_size(), params.hidden_dim(), params.out_dim()};
  h = fnv1a64_bytes(dims, sizeof(dims), h);
  h = fnv1a64_bytes(params.special_ids.data(), params.special_ids.size() * sizeof(TokenId), h);
  h = fnv1a64_bytes(params.embedding.data(), static_cast<std::size_t>(params.embedding.size()) * sizeof(double), h);
  h = fnv1a64_bytes(params.projection.data(), static_cast<std::size_t>(params.projection.size()) * sizeof(double), h);
  h = fnv1a64_bytes(params.bias.data(), static_cast<std::size_t>(params.bias.size()) * sizeof(double), h);
  return to_hex(h);
}

void save_checkpoint(const EncoderParams& params, const std::string& path) {
  params.validate();
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path);
    out.write(kMagic, sizeof(kMagic));
    put(out, kVersion);
    put<std::int64_t>(out, params.vocab_size());
    put<std::int64_t>(out, params.hidden_dim());
    put<std::int64_t>(out, params.out_dim());
    put<std::uint64_t>(out, params.seed);
    put<std::int64_t>(out, params.step);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.special_ids.size()));
    for (TokenId id : params.special_ids) put<std::int32_t>(out, id);
    out.write(reinterpret_cast<const char*>(params.embedding.data()),
              static_cast<std::streamsize>(params.embedding.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(params.projection.data()),
              static_cast<std::streamsize>(params.projection.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(params.bias.data()),
              static_cast<std::streamsize>(params.bias.size() * sizeof(double)));
    if (!out) throw Error("failed writing checkpoint " + path);
  }
  nlohmann::json manifest{{"format", "rgpl-checkpoint"},
                          {"version", kVersion},
                          {"vocab_size", params.vocab_size()},
                          {"hidden_dim", params.hidden_dim()},
                          {"out_dim", params.out_dim()},
                          {"seed", params.seed},
                          {"step", params.step},
                          {"special_ids", params.special_ids},
                          {"params_hash", params_hash(params)}};
  std::ofstream meta(path + ".json");
  if (!meta) throw Error("cannot write checkpoint manifest " + path + ".json");
  meta << manifest.dump(2) << '\n';
}

EncoderParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(path + " is not an rgpl checkpoint");
  }
  if (get<std::uint32_t>(in, path) != kVersion) throw Error("unsupported checkpoint version in " + path);
  const auto vocab = get<std::int64_t>(in, path);
  const auto hidden = get<std::int64_t>(in, path);
  const auto out_dim = get<std::int64_t>(in, path);
  if (vocab < 1 || hidden < 1 || out_dim < 1) throw Error("invalid dimensions in checkpoint " + path);
  EncoderParams p;
  p.seed = get<std::uint64_t>(in, path);
  p.step = get<std::int64_t>(in, path);
  const auto num_specials = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < num_specials; ++i) p.special_ids.push_back(get<std::int32_t>(in, path));
  p.embedding.resize(vocab, hidden);
  p.projection.resize(out_dim, hidden);
  p.bias.resize(out_dim);
  read_doubles(in, p.embedding.data(), p.embedding.size(), path);
  read_doubles(in, p.projection.data(), p.projection.size(), path);
  read_doubles(in, p.bias.data(), p.bias.size(), path);
  p.validate();
  return p;
}

}  // namespace rgpl
