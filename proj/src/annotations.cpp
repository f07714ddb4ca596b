#include "irra/data.hpp"
#include "irra/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace irra {

using nlohmann::json;

namespace {

AnnotationRecord parse_record(const json& j) {
  if (!j.is_object()) throw ParseError("not an object");
  AnnotationRecord rec;
  if (!j.contains("id")) throw ParseError("missing 'id'");
  const auto& id = j.at("id");
  if (!id.is_number_integer() || id.get<long long>() < 0) {
    throw ParseError("'id' must be a non-negative integer");
  }
  rec.identity_id = id.get<std::size_t>();

  const bool has_path = j.contains("img_path");
  const bool has_synth = j.contains("synthetic");
  if (has_path == has_synth) throw ParseError("exactly one of 'img_path' and 'synthetic' is required");
  if (has_path) {
    rec.img_path = j.at("img_path").get<std::string>();
  } else {
    const auto& s = j.at("synthetic");
    const auto& a = s.at("attributes");
    rec.synthetic = SyntheticImageRef{
        s.at("image").get<std::string>(),
        {parse_color(a.at("upper_color").get<std::string>()),
         parse_color(a.at("lower_color").get<std::string>()),
         parse_garment(a.at("garment").get<std::string>()),
         parse_accessory(a.at("accessory").get<std::string>())}};
  }

  if (!j.contains("captions")) throw ParseError("missing 'captions'");
  rec.captions = j.at("captions").get<std::vector<std::string>>();
  if (rec.captions.empty()) throw ParseError("'captions' is empty");
  if (j.contains("split")) rec.split = j.at("split").get<std::string>();
  return rec;
}

json record_to_json(const AnnotationRecord& rec) {
  json j = {{"id", rec.identity_id}, {"captions", rec.captions}, {"split", rec.split}};
  if (rec.synthetic) {
    const auto& a = rec.synthetic->attributes;
    j["synthetic"] = {{"image", rec.synthetic->image_key},
                      {"attributes",
                       {{"upper_color", color_name(a.upper_color)},
                        {"lower_color", color_name(a.lower_color)},
                        {"garment", garment_name(a.garment)},
                        {"accessory", accessory_name(a.accessory)}}}};
  } else {
    j["img_path"] = rec.img_path;
  }
  return j;
}

}  // namespace

std::vector<AnnotationRecord> parse_annotations(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("annotation file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("annotation file must hold a JSON array");
  std::vector<AnnotationRecord> records;
  records.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    try {
      records.push_back(parse_record(doc[i]));
    } catch (const ParseError& e) {
      throw ParseError("record " + std::to_string(i) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ParseError("record " + std::to_string(i) + ": " + e.what());
    }
  }
  return records;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotations(ss.str());
}

std::string dump_annotations(std::span<const AnnotationRecord> records) {
  json doc = json::array();
  for (const auto& r : records) doc.push_back(record_to_json(r));
  return doc.dump(1) + "\n";
}

void save_annotations(const std::filesystem::path& path, std::span<const AnnotationRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << dump_annotations(records);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::map<std::string, std::vector<AnnotationRecord>> partition_by_split(
    std::span<const AnnotationRecord> records) {
  std::map<std::string, std::vector<AnnotationRecord>> out;
  for (const auto& r : records) out[r.split].push_back(r);
  return out;
}

void validate_records(std::span<const AnnotationRecord> records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string where = "record " + std::to_string(i);
    if (r.img_path.empty() == !r.synthetic.has_value()) {
      throw ContractError(where + ": exactly one of img_path and synthetic must be set");
    }
    if (r.captions.empty()) throw ContractError(where + ": no captions");
    for (const auto& c : r.captions) {
      if (split_words(c).empty()) throw ContractError(where + ": empty caption");
    }
    if (r.split != "train" && r.split != "val" && r.split != "test") {
      throw ContractError(where + ": unknown split '" + r.split + "'");
    }
  }
}

}  // namespace irra
