#include "bms/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "bms/errors.hpp"

namespace bms {

namespace {

constexpr const char* kMagic = "BMSCKPT1";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_le(std::string& buf, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
  char b[8];
  std::memcpy(b, &u, 8);
  buf.append(b, 8);
}

double get_le(const char* p) {
  std::uint64_t u;
  std::memcpy(&u, p, 8);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.first == name) return true;
  return false;
}

const Vec& Checkpoint::block(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.first == name) return b.second;
  throw IoError("checkpoint: missing block '" + name + "'");
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  Json header = ck.header;
  header["blocks"] = Json::array();
  for (const auto& [name, data] : ck.blocks) header["blocks"].push_back({{"name", name}, {"length", data.size()}});
  const std::string h = header.dump();
  std::string payload;
  for (const auto& b : ck.blocks)
    for (double v : b.second) put_le(payload, v);

  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open " + tmp + " for writing");
    out << kMagic << '\n' << h.size() << '\n' << h;
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) throw IoError("checkpoint: write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, p, ec);
  if (ec) throw IoError("checkpoint: rename to " + path + " failed: " + ec.message());
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::string magic, len_line;
  std::getline(in, magic);
  if (magic != kMagic) throw IoError("checkpoint: bad magic in " + path);
  std::getline(in, len_line);
  std::size_t hlen = 0;
  try {
    hlen = std::stoull(len_line);
  } catch (...) {
    throw IoError("checkpoint: bad header length in " + path);
  }
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (static_cast<std::size_t>(in.gcount()) != hlen) throw IoError("checkpoint: truncated header in " + path);
  Checkpoint ck;
  try {
    ck.header = Json::parse(h);
  } catch (const std::exception& e) {
    throw IoError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  if (!ck.header.contains("blocks")) throw IoError("checkpoint: header lacks a block list");
  std::vector<char> buf;
  for (const auto& b : ck.header["blocks"]) {
    const std::size_t n = b.at("length").get<std::size_t>();
    buf.resize(n * 8);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size())
      throw IoError("checkpoint: truncated block '" + b.at("name").get<std::string>() + "'");
    Vec v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = get_le(buf.data() + 8 * i);
    ck.blocks.emplace_back(b.at("name").get<std::string>(), std::move(v));
  }
  ck.header.erase("blocks");
  return ck;
}

Json to_json(const NoiseSchedule& s) {
  Json j;
  j["horizon"] = s.horizon();
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, ConstantSchedule>) {
          j["kind"] = "constant";
          j["sigma"] = k.sigma;
        } else if constexpr (std::is_same_v<K, GeometricSchedule>) {
          j["kind"] = "geometric";
          j["sigma_min"] = k.sigma_min;
          j["sigma_max"] = k.sigma_max;
        } else {
          j["kind"] = "edm_ve";
          j["sigma_min"] = k.sigma_min;
          j["sigma_max"] = k.sigma_max;
          j["rho"] = k.rho;
        }
      },
      s.kind());
  return j;
}

NoiseSchedule schedule_from_json(const Json& j) {
  const std::string kind = j.at("kind");
  const double T = j.value("horizon", 1.0);
  if (kind == "constant") return NoiseSchedule::constant(j.at("sigma"), T);
  if (kind == "geometric") return NoiseSchedule::geometric(j.at("sigma_min"), j.at("sigma_max"), T);
  if (kind == "edm_ve") return NoiseSchedule::edm_ve(j.at("sigma_min"), j.at("sigma_max"), j.at("rho"), T);
  throw IoError("unknown schedule kind '" + kind + "'");
}

Json to_json(const Architecture& a) {
  return {{"state_dim", a.state_dim}, {"width", a.width},     {"hidden_layers", a.hidden_layers},
          {"n_freq", a.n_freq},       {"heads", a.heads},     {"head_dim", a.head_dim},
          {"activation", activation_name(a.activation)},     {"horizon", a.horizon}};
}

Architecture architecture_from_json(const Json& j) {
  Architecture a;
  a.state_dim = j.at("state_dim");
  a.width = j.at("width");
  a.hidden_layers = j.at("hidden_layers");
  a.n_freq = j.at("n_freq");
  a.heads = j.value("heads", std::size_t{1});
  a.head_dim = j.value("head_dim", std::size_t{0});
  a.activation = activation_from_name(j.value("activation", std::string("gelu")));
  a.horizon = j.value("horizon", 1.0);
  return a;
}

Json to_json(const PriorDistribution& p) {
  Json j{{"kind", p.is_dirac() ? "dirac" : "gaussian"}, {"mean", p.mean()}};
  if (!p.is_dirac()) j["scale"] = p.scale();
  return j;
}

PriorDistribution prior_from_json(const Json& j) {
  const std::string kind = j.at("kind");
  Vec mean = j.at("mean").get<Vec>();
  if (kind == "dirac") return PriorDistribution::dirac(std::move(mean));
  if (kind == "gaussian") return PriorDistribution::gaussian(std::move(mean), j.at("scale"));
  throw IoError("unknown prior kind '" + kind + "'");
}

void save_field(const std::string& path, const DriftField& f, Json extra) {
  Checkpoint ck;
  ck.header = std::move(extra);
  ck.header["format"] = "bms-field";
  ck.header["architecture"] = to_json(f.architecture());
  if (f.scaling()) {
    ck.header["scaling"] = {{"schedule", to_json(f.scaling()->schedule)}, {"t_cut", f.scaling()->t_cut}};
  } else {
    ck.header["scaling"] = nullptr;
  }
  ck.add("theta", f.parameters());
  write_checkpoint(path, ck);
}

DriftField field_from_checkpoint(const Checkpoint& ck) {
  const Architecture a = architecture_from_json(ck.header.at("architecture"));
  std::optional<OutputScaling> sc;
  if (ck.header.contains("scaling") && !ck.header["scaling"].is_null()) {
    const Json& js = ck.header["scaling"];
    sc = OutputScaling{schedule_from_json(js.at("schedule")), js.at("t_cut").get<double>()};
  }
  DriftField f(a, 0, sc);
  const Vec& theta = ck.block("theta");
  if (theta.size() != a.parameter_count())
    throw ShapeError("checkpoint: parameter count " + std::to_string(theta.size()) + " does not match architecture (" +
                     std::to_string(a.parameter_count()) + ")");
  f.mutable_parameters() = theta;
  return f;
}

DriftField load_field(const std::string& path) { return field_from_checkpoint(read_checkpoint(path)); }

}  // namespace bms
