#include "dbf/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace dbf {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'D', 'B', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path, const char* what) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError(path + ": truncated checkpoint while reading " + std::string(what));
  return value;
}

json dims_to_json(const DatasetDims& d) {
  return {{"l_t", d.l_t}, {"d_t", d.d_t}, {"l_v", d.l_v},
          {"d_v", d.d_v}, {"l_a", d.l_a}, {"d_a", d.d_a}};
}

DatasetDims dims_from_json(const json& j, const std::string& path) {
  try {
    return DatasetDims{j.at("l_t").get<size_t>(), j.at("d_t").get<size_t>(),
                       j.at("l_v").get<size_t>(), j.at("d_v").get<size_t>(),
                       j.at("l_a").get<size_t>(), j.at("d_a").get<size_t>()};
  } catch (const json::exception& e) {
    throw IoError(path + ": bad dims in checkpoint manifest: " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const DbfModel& model) {
  std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);

    json manifest;
    manifest["config"] = json::parse(train_config_to_json(model.config));
    manifest["dims"] = dims_to_json(model.dims);
    std::string mtext = manifest.dump();
    write_pod(out, static_cast<uint64_t>(mtext.size()));
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));

    write_pod(out, static_cast<uint64_t>(model.params.size()));
    for (const auto& [name, tensor] : model.params) {
      write_pod(out, static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod(out, static_cast<uint32_t>(tensor.shape.size()));
      for (size_t dim : tensor.shape) write_pod(out, static_cast<uint64_t>(dim));
      out.write(reinterpret_cast<const char*>(tensor.data->data()),
                static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

DbfModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError(path + ": not a checkpoint file (bad magic)");
  uint32_t version = read_pod<uint32_t>(in, path, "version");
  if (version != kVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));

  uint64_t mlen = read_pod<uint64_t>(in, path, "manifest length");
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw IoError(path + ": truncated checkpoint while reading manifest");
  json manifest;
  try {
    manifest = json::parse(mtext);
  } catch (const json::parse_error& e) {
    throw IoError(path + ": bad checkpoint manifest: " + e.what());
  }
  if (!manifest.contains("config") || !manifest.contains("dims"))
    throw IoError(path + ": checkpoint manifest missing config or dims");

  TrainConfig config = parse_train_config(manifest.at("config").dump(), path + " (manifest)");
  DatasetDims dims = dims_from_json(manifest.at("dims"), path);
  DbfModel model = DbfModel::build(config, dims);

  uint64_t count = read_pod<uint64_t>(in, path, "tensor count");
  if (count != model.params.size())
    throw IoError(path + ": checkpoint holds " + std::to_string(count) +
                  " tensors, model expects " + std::to_string(model.params.size()));
  for (uint64_t t = 0; t < count; ++t) {
    uint32_t name_len = read_pod<uint32_t>(in, path, "tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError(path + ": truncated checkpoint while reading tensor name");
    if (t >= model.params.size() || model.params[t].first != name)
      throw IoError(path + ": unexpected tensor '" + name + "' at position " +
                    std::to_string(t) + " (expected '" + model.params[t].first + "')");
    Tensor& dest = model.params[t].second;
    uint32_t rank = read_pod<uint32_t>(in, path, "tensor rank");
    std::vector<size_t> shape(rank);
    for (uint32_t r = 0; r < rank; ++r)
      shape[r] = static_cast<size_t>(read_pod<uint64_t>(in, path, "tensor dim"));
    if (shape != dest.shape)
      throw IoError(path + ": tensor '" + name + "' has unexpected shape");
    in.read(reinterpret_cast<char*>(dest.data->data()),
            static_cast<std::streamsize>(dest.size() * sizeof(double)));
    if (!in) throw IoError(path + ": truncated checkpoint while reading tensor '" + name + "'");
  }
  return model;
}

}  // namespace dbf
