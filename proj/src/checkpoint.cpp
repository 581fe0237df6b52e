#include "wombet/checkpoint.hpp"

#include "wombet/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace wombet {

namespace {

constexpr const char* kMagic = "WOMBET-NN";
constexpr int kVersion = 1;

void put_floats(std::string& out, const float* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(data[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char buf[4];
    std::memcpy(buf, &bits, 4);
    out.append(buf, 4);
  }
}

void get_floats(const std::string& in, std::size_t& at, float* data, Eigen::Index n) {
  const std::size_t need = static_cast<std::size_t>(n) * 4;
  if (at + need > in.size()) throw ParseError("parameter stream truncated", in.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, in.data() + at + static_cast<std::size_t>(i) * 4, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    data[i] = std::bit_cast<float>(bits);
  }
  at += need;
}

}  // namespace

const nn::Mlp<float>& ParameterFile::network(const std::string& name) const {
  for (const auto& n : networks)
    if (n.name == name) return n.net;
  throw PreconditionError("checkpoint has no network named '" + name + "'");
}

std::string encode_parameters(const ParameterFile& file) {
  nlohmann::json header;
  header["networks"] = nlohmann::json::array();
  for (const auto& n : file.networks) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : n.net.layers)
      layers.push_back({{"in", l.in_dim()},
                        {"out", l.out_dim()},
                        {"activation", nn::to_string(l.activation)},
                        {"layer_norm", l.layer_norm}});
    header["networks"].push_back({{"name", n.name}, {"layers", layers}});
  }
  header["meta"] = file.meta;

  std::string out = std::string(kMagic) + " v" + std::to_string(kVersion) + "\n" + header.dump() + "\n";
  for (const auto& n : file.networks) {
    for (const auto& l : n.net.layers) {
      put_floats(out, l.weight.data(), l.weight.size());
      put_floats(out, l.bias.data(), l.bias.size());
      put_floats(out, l.gain.data(), l.gain.size());
      put_floats(out, l.shift.data(), l.shift.size());
    }
  }
  return out;
}

ParameterFile decode_parameters(const std::string& bytes) {
  const auto first_nl = bytes.find('\n');
  if (first_nl == std::string::npos) throw ParseError("missing magic line", bytes.size());
  const std::string magic = bytes.substr(0, first_nl);
  if (magic.rfind(kMagic, 0) != 0) throw ParseError("not a parameter file", 0);
  if (magic != std::string(kMagic) + " v" + std::to_string(kVersion))
    throw UnsupportedVersion("unsupported parameter file version: '" + magic + "'");

  const auto second_nl = bytes.find('\n', first_nl + 1);
  if (second_nl == std::string::npos) throw ParseError("missing JSON header", bytes.size());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(first_nl + 1),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(second_nl));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("bad JSON header: ") + e.what(), first_nl + 1 + e.byte);
  }

  ParameterFile file;
  std::size_t at = second_nl + 1;
  try {
    file.meta = header.value("meta", nlohmann::json::object());
    for (const auto& jn : header.at("networks")) {
      NamedNetwork n;
      n.name = jn.at("name").get<std::string>();
      for (const auto& jl : jn.at("layers")) {
        nn::Layer<float> l;
        const auto in = jl.at("in").get<Eigen::Index>();
        const auto out = jl.at("out").get<Eigen::Index>();
        if (in <= 0 || out <= 0) throw ParseError("non-positive layer dimension", first_nl + 1);
        l.weight.resize(out, in);
        l.bias.resize(out);
        l.activation = nn::activation_from_string(jl.at("activation").get<std::string>());
        l.layer_norm = jl.at("layer_norm").get<bool>();
        if (l.layer_norm) {
          l.gain.resize(out);
          l.shift.resize(out);
        }
        n.net.layers.push_back(std::move(l));
      }
      nn::validate(n.net);
      file.networks.push_back(std::move(n));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad JSON header: ") + e.what(), first_nl + 1);
  } catch (const nn::ContractViolation& e) {
    throw ParseError(std::string("inconsistent layer shapes: ") + e.what(), first_nl + 1);
  }

  for (auto& n : file.networks) {
    for (auto& l : n.net.layers) {
      get_floats(bytes, at, l.weight.data(), l.weight.size());
      get_floats(bytes, at, l.bias.data(), l.bias.size());
      get_floats(bytes, at, l.gain.data(), l.gain.size());
      get_floats(bytes, at, l.shift.data(), l.shift.size());
    }
  }
  if (at != bytes.size()) throw ParseError("trailing bytes after parameter stream", at);
  return file;
}

void save_parameters(const std::filesystem::path& path, const ParameterFile& file) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_parameters(file);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ParameterFile load_parameters(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_parameters(ss.str());
}

}  // namespace wombet
