#include "gem/dataset.hpp"

#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "gem/image_io.hpp"

namespace gem {

using nlohmann::json;

std::string DatasetManifest::to_json() const {
  json doc;
  doc["root"] = root.generic_string();
  doc["entries"] = json::array();
  for (const ManifestEntry& e : entries) {
    json j{{"id", e.id}, {"file", e.file}};
    if (e.crop) j["crop"] = *e.crop;
    doc["entries"].push_back(std::move(j));
  }
  doc["queries"] = queries;
  json gt = json::object();
  for (const auto& [q, rel] : ground_truth) gt[std::to_string(q)] = std::vector<ImageId>(rel.begin(), rel.end());
  doc["ground_truth"] = std::move(gt);
  return doc.dump(1);
}

DatasetManifest DatasetManifest::from_json(const std::string& text, const std::string& origin) {
  DatasetManifest m;
  try {
    const json doc = json::parse(text);
    m.root = doc.value("root", std::string("."));
    for (const json& j : doc.at("entries")) {
      ManifestEntry e;
      e.id = j.at("id").get<ImageId>();
      e.file = j.at("file").get<std::string>();
      if (j.contains("crop")) e.crop = j.at("crop").get<std::array<std::size_t, 4>>();
      m.entries.push_back(std::move(e));
    }
    if (doc.contains("queries")) m.queries = doc.at("queries").get<std::vector<ImageId>>();
    if (doc.contains("ground_truth")) {
      for (const auto& [key, ids] : doc.at("ground_truth").items()) {
        const auto rel = ids.get<std::vector<ImageId>>();
        m.ground_truth[std::stoull(key)] = std::set<ImageId>(rel.begin(), rel.end());
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(origin + ": invalid manifest: " + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError(origin + ": ground_truth keys must be image ids");
  }
  try {
    m.validate();
  } catch (const Error& e) {
    throw FormatError(origin + ": " + e.what());
  }
  return m;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open manifest");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  DatasetManifest m = from_json(text, path.string());
  if (m.root.is_relative()) m.root = path.parent_path() / m.root;
  return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out << to_json() << '\n';
}

void DatasetManifest::validate() const {
  std::set<ImageId> ids;
  for (const ManifestEntry& e : entries) {
    if (!ids.insert(e.id).second) throw InvalidArgument("duplicate manifest id " + std::to_string(e.id));
    if (e.crop && ((*e.crop)[2] == 0 || (*e.crop)[3] == 0)) {
      throw InvalidArgument("empty crop rectangle for image " + std::to_string(e.id));
    }
  }
  for (ImageId q : queries) {
    if (!ids.count(q)) throw InvalidArgument("query " + std::to_string(q) + " has no manifest entry");
    if (!ground_truth.count(q)) throw InvalidArgument("query " + std::to_string(q) + " has no ground truth");
  }
}

std::filesystem::path DatasetManifest::resolve(const ManifestEntry& e) const { return root / e.file; }

Image DatasetManifest::load_image(const ManifestEntry& e) const {
  Image img = read_pnm(resolve(e));
  if (!e.crop) return img;
  const auto [x, y, w, h] = *e.crop;
  if (x + w > img.width || y + h > img.height) {
    throw FormatError(resolve(e).string() + ": crop [" + std::to_string(x) + "," + std::to_string(y) +
                      "," + std::to_string(w) + "," + std::to_string(h) + "] leaves the " +
                      std::to_string(img.width) + "x" + std::to_string(img.height) + " image");
  }
  return crop(img, x, y, w, h);
}

}  // namespace gem
