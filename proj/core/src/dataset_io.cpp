#include "hcb/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace hcb {

using nlohmann::json;

void save_dataset_dir(const Dataset& ds, const std::filesystem::path& dir,
                      const std::string& config_digest) {
  ds.validate();
  std::filesystem::create_directories(dir);

  std::vector<const Example*> ordered;
  ordered.reserve(ds.size());
  for (const Example& e : ds.examples) ordered.push_back(&e);
  std::sort(ordered.begin(), ordered.end(),
            [](const Example* a, const Example* b) { return a->id < b->id; });

  {
    std::ofstream bin(dir / "images.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw Error("cannot write " + (dir / "images.bin").string());
    std::vector<unsigned char> row;
    for (const Example* e : ordered) {
      row.resize(e->image.size());
      for (size_t p = 0; p < row.size(); ++p) {
        row[p] = static_cast<unsigned char>(
            std::lround(clamp01(e->image.pixels[p]) * 255.0));
      }
      bin.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
    }
  }

  json manifest;
  manifest["version"] = 1;
  manifest["shape"] = {ds.height, ds.width, ds.channels};
  manifest["num_classes"] = ds.num_classes;
  manifest["split"] = split_name(ds.split);
  if (!config_digest.empty()) manifest["config_digest"] = config_digest;
  json examples = json::array();
  for (const Example* e : ordered) {
    examples.push_back({{"id", e->id}, {"label", e->label}, {"innocuous", e->innocuous}});
  }
  manifest["examples"] = std::move(examples);

  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  mf << manifest.dump(2) << "\n";
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ParseError("cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (manifest.value("version", 0) != 1) {
    throw ParseError((dir / "manifest.json").string() + ": unsupported version");
  }

  Dataset ds;
  const auto& shape = manifest.at("shape");
  ds.height = shape.at(0).get<int>();
  ds.width = shape.at(1).get<int>();
  ds.channels = shape.at(2).get<int>();
  ds.num_classes = manifest.at("num_classes").get<int>();
  ds.split = split_from_name(manifest.at("split").get<std::string>());

  const size_t per_image = static_cast<size_t>(ds.height) * ds.width * ds.channels;
  std::ifstream bin(dir / "images.bin", std::ios::binary);
  if (!bin) throw ParseError("cannot open " + (dir / "images.bin").string());

  std::vector<unsigned char> raw(per_image);
  for (const auto& je : manifest.at("examples")) {
    if (!bin.read(reinterpret_cast<char*>(raw.data()),
                  static_cast<std::streamsize>(per_image))) {
      throw ParseError((dir / "images.bin").string() + ": truncated payload");
    }
    Example e;
    e.id = je.at("id").get<int64_t>();
    e.label = je.at("label").get<int>();
    e.innocuous = je.at("innocuous").get<bool>();
    e.image = Image(ds.height, ds.width, ds.channels);
    for (size_t p = 0; p < per_image; ++p)
      e.image.pixels[p] = static_cast<float>(raw[p]) / 255.0f;
    ds.examples.push_back(std::move(e));
  }
  ds.validate();
  return ds;
}

}  // namespace hcb
