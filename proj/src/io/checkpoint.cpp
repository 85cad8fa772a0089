#include "mergeguard/io/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

#include <json.hpp>
#include <zlib.h>

namespace mergeguard::io {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'M', 'G', 'C', 'K'};
constexpr std::string_view kCreatedBy = "mergeguard 0.1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint64_t get_le(std::string_view bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

std::uint32_t checksum(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, p, n);
    p += n;
    left -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

class BlobWriter {
 public:
  void f32(const std::string& name, const Tensor& t) {
    begin(name, "f32", t.shape(), t.size() * 4);
    for (const float v : t.data()) put_u32(payload_, std::bit_cast<std::uint32_t>(v));
  }
  void i32(const std::string& name, const std::vector<int>& v) {
    begin(name, "i32", Shape{v.size()}, v.size() * 4);
    for (const int x : v) put_u32(payload_, static_cast<std::uint32_t>(x));
  }
  void u8(const std::string& name, const std::vector<std::uint8_t>& v) {
    begin(name, "u8", Shape{v.size()}, v.size());
    payload_.append(reinterpret_cast<const char*>(v.data()), v.size());
  }

  std::string assemble(json header) const {
    header["blobs"] = entries_;
    const std::string text = header.dump();
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kCheckpointVersion);
    put_u64(out, text.size());
    put_u64(out, payload_.size());
    put_u32(out, checksum(text + payload_));
    out += text;
    out += payload_;
    return out;
  }

 private:
  void begin(const std::string& name, const char* dtype, const Shape& shape, std::size_t bytes) {
    entries_.push_back({{"name", name},
                        {"dtype", dtype},
                        {"shape", shape},
                        {"offset", payload_.size()},
                        {"bytes", bytes}});
  }
  json entries_ = json::array();
  std::string payload_;
};

// Verified view of a container: header parsed, payload bounds known.
class BlobReader {
 public:
  BlobReader(std::string_view bytes, std::string_view expected_kind) {
    if (bytes.size() < kFixedHeaderBytes) {
      throw CorruptionError("truncated checkpoint: " + std::to_string(bytes.size()) +
                            " bytes, the fixed header alone needs " +
                            std::to_string(kFixedHeaderBytes));
    }
    if (!std::equal(kMagic, kMagic + 4, bytes.begin())) {
      throw CorruptionError("not a checkpoint: bad magic at offset 0");
    }
    const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
    if (version != kCheckpointVersion) {
      throw VersionError("checkpoint format version " + std::to_string(version) +
                         ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    const std::uint64_t header_len = get_le(bytes, 8, 8);
    const std::uint64_t payload_len = get_le(bytes, 16, 8);
    const std::uint64_t body = bytes.size() - kFixedHeaderBytes;
    if (header_len > body || payload_len > body - header_len) {
      throw CorruptionError("truncated checkpoint: header declares " +
                            std::to_string(header_len) + "+" + std::to_string(payload_len) +
                            " bytes, file holds " + std::to_string(body));
    }
    if (header_len + payload_len != body) {
      throw CorruptionError("checkpoint has " + std::to_string(body - header_len - payload_len) +
                            " trailing bytes");
    }
    const std::string_view covered = bytes.substr(kFixedHeaderBytes);
    const auto stored = static_cast<std::uint32_t>(get_le(bytes, 24, 4));
    if (checksum(covered) != stored) throw CorruptionError("checkpoint checksum mismatch");
    try {
      header_ = json::parse(covered.substr(0, header_len));
    } catch (const json::exception& e) {
      throw CorruptionError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    payload_ = covered.substr(header_len);
    if (header_.value("kind", std::string{}) != expected_kind) {
      throw CorruptionError("checkpoint holds a '" + header_.value("kind", std::string{"?"}) +
                            "', expected a '" + std::string(expected_kind) + "'");
    }
    if (!header_.contains("blobs") || !header_["blobs"].is_array()) {
      throw CorruptionError("checkpoint header lacks a blob table");
    }
  }

  const json& header() const { return header_; }

  CheckpointMeta meta() const {
    CheckpointMeta m;
    m.seed = header_.value("seed", std::uint64_t{0});
    m.note = header_.value("note", std::string{});
    return m;
  }

  Tensor f32(std::size_t index, const std::string& name) const {
    const auto [shape, raw] = blob(index, name, "f32", 4);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(raw, 4 * i, 4)));
    }
    return t;
  }

  std::vector<int> i32(std::size_t index, const std::string& name) const {
    const auto [shape, raw] = blob(index, name, "i32", 4);
    std::vector<int> v(shape_size(shape));
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = static_cast<int>(static_cast<std::uint32_t>(get_le(raw, 4 * i, 4)));
    }
    return v;
  }

  std::vector<std::uint8_t> u8(std::size_t index, const std::string& name) const {
    const auto [shape, raw] = blob(index, name, "u8", 1);
    return {raw.begin(), raw.end()};
  }

  std::size_t blob_count() const { return header_["blobs"].size(); }

 private:
  std::pair<Shape, std::string_view> blob(std::size_t index, const std::string& name,
                                          const char* dtype, std::size_t width) const {
    const json& blobs = header_["blobs"];
    if (index >= blobs.size()) throw CorruptionError("checkpoint is missing blob '" + name + "'");
    try {
      const json& e = blobs[index];
      if (e.at("name").get<std::string>() != name || e.at("dtype").get<std::string>() != dtype) {
        throw CorruptionError("checkpoint blob " + std::to_string(index) + " is '" +
                              e.at("name").get<std::string>() + "', expected '" + name + "'");
      }
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto bytes = e.at("bytes").get<std::size_t>();
      if (bytes != shape_size(shape) * width || offset > payload_.size() ||
          bytes > payload_.size() - offset) {
        throw CorruptionError("checkpoint blob '" + name + "' has inconsistent extent");
      }
      return {shape, payload_.substr(offset, bytes)};
    } catch (const json::exception& e) {
      throw CorruptionError("checkpoint blob '" + name + "': " + e.what());
    }
  }

  json header_;
  std::string_view payload_;
};

json base_header(std::string_view kind, const CheckpointMeta& meta) {
  return {{"kind", kind},
          {"version", kCheckpointVersion},
          {"created_by", kCreatedBy},
          {"seed", meta.seed},
          {"note", meta.note}};
}

json layer_record(const nn::Layer& layer) {
  if (const auto* d = std::get_if<nn::DenseLayer>(&layer)) {
    return {{"kind", "dense"}, {"in", d->in()}, {"out", d->out()}};
  }
  if (const auto* c = std::get_if<nn::Conv2dLayer>(&layer)) {
    return {{"kind", "conv"},    {"c_in", c->c_in()},     {"c_out", c->c_out()},
            {"k", c->kernel_size()}, {"stride", c->stride}, {"padding", c->padding}};
  }
  if (const auto* a = std::get_if<nn::ParametricActivation>(&layer)) {
    return {{"kind", "activation"},
            {"activation", nn::to_string(a->kind)},
            {"beta", a->beta},
            {"trainable", a->trainable},
            {"fixed_alpha", a->fixed_alpha}};
  }
  if (const auto* m = std::get_if<nn::MaxPool2d>(&layer)) {
    return {{"kind", "maxpool"}, {"size", m->size}};
  }
  return {{"kind", "flatten"}};
}

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw CorruptionError("checkpoint blob '" + name + "' has shape [" + shape_string(t.shape()) +
                          "], its layer record implies [" + shape_string(shape) + "]");
  }
}

nn::Layer read_layer(const json& r, std::size_t i, const BlobReader& blobs, std::size_t& next) {
  const std::string prefix = std::to_string(i) + ".";
  const std::string kind = r.at("kind").get<std::string>();
  if (kind == "dense") {
    nn::DenseLayer d;
    d.weight = blobs.f32(next++, prefix + "weight");
    d.bias = blobs.f32(next++, prefix + "bias");
    const auto in = r.at("in").get<std::size_t>(), out = r.at("out").get<std::size_t>();
    expect_shape(d.weight, {out, in}, prefix + "weight");
    expect_shape(d.bias, {out}, prefix + "bias");
    return d;
  }
  if (kind == "conv") {
    nn::Conv2dLayer c;
    c.kernel = blobs.f32(next++, prefix + "kernel");
    c.bias = blobs.f32(next++, prefix + "bias");
    c.stride = r.at("stride").get<std::size_t>();
    c.padding = r.at("padding").get<std::size_t>();
    const auto k = r.at("k").get<std::size_t>();
    const auto c_out = r.at("c_out").get<std::size_t>();
    expect_shape(c.kernel, {c_out, r.at("c_in").get<std::size_t>(), k, k}, prefix + "kernel");
    expect_shape(c.bias, {c_out}, prefix + "bias");
    return c;
  }
  if (kind == "activation") {
    nn::ParametricActivation a;
    a.kind = nn::activation_kind_from_string(r.at("activation").get<std::string>());
    a.beta = r.at("beta").get<float>();
    a.trainable = r.at("trainable").get<bool>();
    a.fixed_alpha = r.at("fixed_alpha").get<float>();
    if (a.trainable) {
      a.raw_alpha = blobs.f32(next++, prefix + "raw_alpha");
      expect_shape(a.raw_alpha, {1}, prefix + "raw_alpha");
    }
    return a;
  }
  if (kind == "maxpool") return nn::MaxPool2d{r.at("size").get<std::size_t>()};
  if (kind == "flatten") return nn::Flatten{};
  throw CorruptionError("checkpoint layer " + std::to_string(i) + " has unknown kind '" + kind +
                        "'");
}

}  // namespace

std::string encode_model(const nn::Model& model, const CheckpointMeta& meta) {
  json header = base_header("model", meta);
  header["input_shape"] = model.input_shape();
  header["classes"] = model.classes();
  json layers = json::array();
  BlobWriter blobs;
  const auto names = model.parameter_names();
  const auto values = model.parameter_values<float>();
  for (const auto& layer : model.layers()) layers.push_back(layer_record(layer));
  for (std::size_t i = 0; i < names.size(); ++i) blobs.f32(names[i], values[i]);
  header["layers"] = std::move(layers);
  return blobs.assemble(std::move(header));
}

nn::Model decode_model(std::string_view bytes, CheckpointMeta* meta) {
  const BlobReader reader(bytes, "model");
  const json& h = reader.header();
  try {
    nn::Model model(h.at("input_shape").get<Shape>(), h.at("classes").get<std::size_t>());
    const json& layers = h.at("layers");
    std::size_t next = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) model.add(read_layer(layers[i], i, reader, next));
    if (next != reader.blob_count()) {
      throw CorruptionError("checkpoint has " + std::to_string(reader.blob_count() - next) +
                            " unused blobs");
    }
    model.validate();
    if (meta != nullptr) *meta = reader.meta();
    return model;
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint header: ") + e.what());
  } catch (const CorruptionError&) {
    throw;
  } catch (const Error& e) {
    throw CorruptionError(std::string("checkpoint describes an invalid model: ") + e.what());
  }
}

std::string encode_dataset(const trojan::LabeledImageSet& set, const CheckpointMeta& meta) {
  set.validate();
  json header = base_header("dataset", meta);
  header["classes"] = set.classes;
  BlobWriter blobs;
  blobs.f32("images", set.images);
  blobs.i32("labels", set.labels);
  blobs.u8("poisoned", set.poisoned);
  return blobs.assemble(std::move(header));
}

trojan::LabeledImageSet decode_dataset(std::string_view bytes, CheckpointMeta* meta) {
  const BlobReader reader(bytes, "dataset");
  trojan::LabeledImageSet set;
  try {
    set.classes = reader.header().at("classes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint header: ") + e.what());
  }
  set.images = reader.f32(0, "images");
  set.labels = reader.i32(1, "labels");
  set.poisoned = reader.u8(2, "poisoned");
  try {
    set.validate();
  } catch (const Error& e) {
    throw CorruptionError(std::string("checkpoint describes an invalid dataset: ") + e.what());
  }
  if (meta != nullptr) *meta = reader.meta();
  return set;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IngestionError("read failed for '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IngestionError("cannot create '" + path.parent_path().string() + "': " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IngestionError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IngestionError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

namespace {

template <typename F>
auto with_path(const std::filesystem::path& path, F f) {
  try {
    return f();
  } catch (const CorruptionError& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  } catch (const VersionError& e) {
    throw VersionError(path.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const nn::Model& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta) {
  write_file(path, encode_model(model, meta));
}

nn::Model load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  const std::string bytes = read_file(path);
  return with_path(path, [&] { return decode_model(bytes, meta); });
}

void save_dataset(const trojan::LabeledImageSet& set, const std::filesystem::path& path,
                  const CheckpointMeta& meta) {
  write_file(path, encode_dataset(set, meta));
}

trojan::LabeledImageSet load_dataset(const std::filesystem::path& path, CheckpointMeta* meta) {
  const std::string bytes = read_file(path);
  return with_path(path, [&] { return decode_dataset(bytes, meta); });
}

}  // namespace mergeguard::io
