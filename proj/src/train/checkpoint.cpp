#include "ilgnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <sstream>

namespace ilgnet {

namespace {

constexpr char kMagic[4] = {'I', 'L', 'G', 'C'};

struct Blob {
  std::string name;
  std::string kind;  // param | running | meta
  Shape shape;
  std::size_t offset = 0;  // bytes into the payload
};

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(std::string_view in, std::size_t at) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void append_floats(std::string& payload, std::span<const float> values) {
  for (float f : values) put_le(payload, std::bit_cast<std::uint32_t>(f));
}

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape_token(const std::string& token) {
  Shape s;
  std::stringstream ss(token);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw CheckpointError("checkpoint manifest: malformed shape '" + token + "'");
    }
    s.push_back(std::stoull(part));
  }
  if (s.empty()) throw CheckpointError("checkpoint manifest: empty shape");
  return s;
}

struct Parsed {
  std::map<std::string, std::string> fields;
  std::vector<Blob> blobs;
  std::string payload;
};

Parsed parse_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  constexpr std::size_t header = 4 + 4 + 8;
  if (bytes.size() < header) throw CheckpointError("checkpoint truncated: header incomplete in " + path.string());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("not an ILGC checkpoint: " + path.string());
  auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  auto manifest_len = get_le<std::uint64_t>(bytes, 8);
  if (manifest_len > bytes.size() - header) throw CheckpointError("checkpoint truncated: manifest incomplete");

  Parsed p;
  std::istringstream manifest(bytes.substr(header, manifest_len));
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    if (line.starts_with("blob ")) {
      std::istringstream ls(line.substr(5));
      Blob b;
      std::string shape, dtype;
      if (!(ls >> b.name >> b.kind >> shape >> dtype >> b.offset) || dtype != "f32") {
        throw CheckpointError("checkpoint manifest: malformed blob line '" + line + "'");
      }
      b.shape = parse_shape_token(shape);
      p.blobs.push_back(std::move(b));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint manifest: malformed line '" + line + "'");
    p.fields[line.substr(0, eq)] = line.substr(eq + 1);
  }

  for (const char* key : {"variant", "width_multiplier", "input_side", "seed", "iteration", "payload_bytes", "checksum"}) {
    if (!p.fields.contains(key)) throw CheckpointError(std::string("checkpoint manifest lacks '") + key + "'");
  }
  std::uint64_t expected = std::stoull(p.fields["payload_bytes"]);
  std::size_t actual = bytes.size() - header - manifest_len;
  if (actual < expected) {
    throw CheckpointError("checkpoint truncated: payload has " + std::to_string(actual) + " of " +
                          std::to_string(expected) + " bytes");
  }
  if (actual > expected) throw CheckpointError("checkpoint corrupted: trailing bytes after payload");
  p.payload = bytes.substr(header + manifest_len);

  std::ostringstream sum;
  sum << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(p.payload);
  if (sum.str() != p.fields["checksum"]) throw CheckpointError("checkpoint corrupted: payload checksum mismatch");

  for (const auto& b : p.blobs) {
    if (b.offset % 4 != 0 || b.offset + 4 * element_count(b.shape) > p.payload.size()) {
      throw CheckpointError("checkpoint corrupted: blob '" + b.name + "' lies outside the payload");
    }
  }
  return p;
}

const Blob& find_blob(const Parsed& p, const std::string& name, const std::string& kind) {
  for (const auto& b : p.blobs) {
    if (b.name == name && b.kind == kind) return b;
  }
  throw CheckpointError("checkpoint has no " + kind + " blob '" + name + "'");
}

void read_into(const Parsed& p, const Blob& b, std::span<float> dst) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = std::bit_cast<float>(get_le<std::uint32_t>(p.payload, b.offset + 4 * i));
  }
}

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& path, const TrainConfig* config) {
  std::string payload;
  std::ostringstream blobs;
  auto add = [&](const std::string& name, const char* kind, const Tensor32& t) {
    blobs << "blob " << name << ' ' << kind << ' ' << shape_token(t.shape()) << " f32 " << payload.size() << '\n';
    append_floats(payload, t.data());
  };
  for (const auto& p : net.parameters()) add(p.name, "param", p.value);
  auto bn_names = net.bn_state_names();
  for (std::size_t i = 0; i < net.bn_states().size(); ++i) {
    add(bn_names[i] + "/running_mean", "running", net.bn_states()[i].running_mean);
    add(bn_names[i] + "/running_var", "running", net.bn_states()[i].running_var);
  }
  add("channel_means", "meta", Tensor32({3}, std::vector<float>(net.channel_means.begin(), net.channel_means.end())));

  std::ostringstream m;
  m << std::setprecision(17);
  m << "variant=" << variant_name(net.variant().kind) << '\n'
    << "width_multiplier=" << net.variant().width_multiplier << '\n'
    << "input_side=" << net.variant().input_side << '\n'
    << "seed=" << net.seed << '\n'
    << "iteration=" << net.iteration << '\n'
    << "payload_bytes=" << payload.size() << '\n'
    << "checksum=" << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(payload) << std::dec << '\n';
  if (config) {
    std::ostringstream c;
    config->write(c);
    std::istringstream lines(c.str());
    std::string line;
    while (std::getline(lines, line)) m << "config." << line << '\n';
  }
  m << blobs.str();
  std::string manifest = m.str();

  std::string bytes(kMagic, 4);
  put_le(bytes, kCheckpointVersion);
  put_le(bytes, static_cast<std::uint64_t>(manifest.size()));
  bytes += manifest;
  bytes += payload;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
  Parsed p = parse_file(path);
  ArchVariant variant;
  try {
    variant.kind = parse_variant(p.fields["variant"]);
    variant.width_multiplier = std::stod(p.fields["width_multiplier"]);
    variant.input_side = std::stoull(p.fields["input_side"]);
    variant.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint variant descriptor invalid: ") + e.what());
  }
  Network net = assemble(variant, std::stoull(p.fields["seed"]));
  load_checkpoint_into(net, path);
  return net;
}

void load_checkpoint_into(Network& net, const std::filesystem::path& path) {
  Parsed p = parse_file(path);
  const std::string& stored = p.fields["variant"];
  if (stored != variant_name(net.variant().kind)) {
    throw CheckpointError("variant mismatch: checkpoint holds " + stored + ", network is " +
                          std::string(variant_name(net.variant().kind)));
  }

  // Validate everything before touching the network.
  std::vector<const Blob*> param_blobs;
  for (const auto& param : net.parameters()) {
    const Blob& b = find_blob(p, param.name, "param");
    if (b.shape != param.value.shape()) {
      throw CheckpointError("shape mismatch for parameter " + param.name + ": checkpoint " + to_string(b.shape) +
                            ", network " + to_string(param.value.shape()));
    }
    param_blobs.push_back(&b);
  }
  auto bn_names = net.bn_state_names();
  std::vector<std::pair<const Blob*, const Blob*>> bn_blobs;
  for (std::size_t i = 0; i < bn_names.size(); ++i) {
    const Blob& mean = find_blob(p, bn_names[i] + "/running_mean", "running");
    const Blob& var = find_blob(p, bn_names[i] + "/running_var", "running");
    const auto& state = net.bn_states()[i];
    if (mean.shape != state.running_mean.shape() || var.shape != state.running_var.shape()) {
      throw CheckpointError("shape mismatch for running statistics of " + bn_names[i]);
    }
    bn_blobs.emplace_back(&mean, &var);
  }
  const Blob& means = find_blob(p, "channel_means", "meta");
  if (means.shape != Shape{3}) throw CheckpointError("channel_means must hold 3 values");

  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    read_into(p, *param_blobs[i], params[i].value.data());
    params[i].zero_grad();
    params[i].momentum_buffer.fill(0.0f);
  }
  for (std::size_t i = 0; i < bn_blobs.size(); ++i) {
    read_into(p, *bn_blobs[i].first, net.bn_states()[i].running_mean.data());
    read_into(p, *bn_blobs[i].second, net.bn_states()[i].running_var.data());
  }
  read_into(p, means, net.channel_means);
  net.iteration = std::stoull(p.fields["iteration"]);
  net.seed = std::stoull(p.fields["seed"]);
}

}  // namespace ilgnet
