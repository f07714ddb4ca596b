#include "irra/array_io.hpp"
#include "irra/data.hpp"
#include "irra/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

namespace irra {

namespace {

using Rgb = std::array<double, 3>;

const std::array<std::string, kNumColors> kColorNames = {
    "black", "white", "red", "green", "blue", "yellow", "cyan", "magenta"};
const std::array<Rgb, kNumColors> kColorValues = {{{0, 0, 0},
                                                   {1, 1, 1},
                                                   {1, 0, 0},
                                                   {0, 1, 0},
                                                   {0, 0, 1},
                                                   {1, 1, 0},
                                                   {0, 1, 1},
                                                   {1, 0, 1}}};
const std::array<std::string, kNumGarments> kGarmentNames = {"shirt", "jacket", "coat",
                                                             "sweater"};
const std::array<std::string, kNumAccessories> kAccessoryNames = {"backpack", "handbag", "hat",
                                                                  "umbrella"};
const std::array<Rgb, kNumAccessories> kAccessoryValues = {
    {{1, 0.5, 0}, {0.5, 0, 1}, {0.5, 0.5, 0.5}, {0, 0.5, 0.5}}};
constexpr Rgb kShoeColor = {0.3, 0.3, 0.3};

// Fraction of a textured pixel pulled toward mid-grey.
constexpr double kTextureBlend = 0.4;

bool garment_texture(std::size_t garment, std::size_t row, std::size_t col) {
  switch (garment) {
    case 1: return (col / 2) % 2 == 1;
    case 2: return (row / 2) % 2 == 1;
    case 3: return ((row / 2) + (col / 2)) % 2 == 1;
    default: return false;
  }
}

std::size_t find_name(const auto& names, const std::string& name, const char* what) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ParseError(std::string("unknown ") + what + " '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

std::string image_key(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "image/%06zu", index);
  return buf;
}

}  // namespace

const std::string& color_name(std::size_t c) { return kColorNames.at(c); }
const std::string& garment_name(std::size_t g) { return kGarmentNames.at(g); }
const std::string& accessory_name(std::size_t a) { return kAccessoryNames.at(a); }

std::size_t parse_color(const std::string& name) { return find_name(kColorNames, name, "color"); }
std::size_t parse_garment(const std::string& name) {
  return find_name(kGarmentNames, name, "garment");
}
std::size_t parse_accessory(const std::string& name) {
  return find_name(kAccessoryNames, name, "accessory");
}

Image render_person(const PersonAttributes& a, std::size_t height, std::size_t width,
                    std::size_t channels) {
  if (height < 4 || width == 0 || channels == 0) {
    throw ConfigError("synthetic images need height >= 4 and positive width/channels");
  }
  Image img(height, width, channels);
  const auto band = height / 4;
  for (std::size_t r = 0; r < height; ++r) {
    const auto region = std::min<std::size_t>(r / band, 3);
    for (std::size_t c = 0; c < width; ++c) {
      Rgb px;
      switch (region) {
        case 0: px = kAccessoryValues.at(a.accessory); break;
        case 1:
          px = kColorValues.at(a.upper_color);
          if (garment_texture(a.garment, r, c)) {
            for (auto& v : px) v = (1.0 - kTextureBlend) * v + kTextureBlend * 0.5;
          }
          break;
        case 2: px = kColorValues.at(a.lower_color); break;
        default: px = kShoeColor; break;
      }
      for (std::size_t ch = 0; ch < channels; ++ch) img.at(r, c, ch) = px[ch % 3];
    }
  }
  return img;
}

std::string describe_person(const PersonAttributes& a, std::size_t template_index) {
  const auto& u = color_name(a.upper_color);
  const auto& l = color_name(a.lower_color);
  const auto& g = garment_name(a.garment);
  const auto& acc = accessory_name(a.accessory);
  switch (template_index % 4) {
    case 0: return "a person wearing a " + u + " " + g + " and " + l + " pants , carrying a " + acc + " .";
    case 1: return "the pedestrian has a " + u + " " + g + " , " + l + " pants and a " + acc + " .";
    case 2: return "this person wears " + l + " pants and a " + u + " " + g + " with a " + acc + " .";
    default: return "a " + acc + " , a " + u + " " + g + " and " + l + " pants .";
  }
}

const Image& Dataset::image_for(const AnnotationRecord& record) const {
  const std::string& key = record.synthetic ? record.synthetic->image_key : record.img_path;
  auto it = images.find(key);
  if (it == images.end()) throw IndexError("dataset has no image '" + key + "'");
  return it->second;
}

Dataset generate_synthetic(const SyntheticConfig& config, Rng& rng) {
  if (config.num_identities == 0 || config.images_per_id == 0 || config.captions_per_image == 0) {
    throw ConfigError("synthetic dataset counts must be at least 1");
  }
  constexpr std::size_t space = kNumColors * kNumColors * kNumGarments * kNumAccessories;
  if (config.num_identities > space) {
    throw ConfigError("at most " + std::to_string(space) + " distinct synthetic identities");
  }
  std::vector<std::size_t> codes(space);
  std::iota(codes.begin(), codes.end(), 0);
  std::shuffle(codes.begin(), codes.end(), rng);

  const auto val_per_id = std::min(config.val_images_per_id, config.images_per_id - 1);
  std::normal_distribution<double> noise(0.0, config.noise_std);
  Dataset ds;
  std::size_t index = 0;
  for (std::size_t id = 0; id < config.num_identities; ++id) {
    auto code = codes[id];
    PersonAttributes attrs;
    attrs.upper_color = code % kNumColors;
    code /= kNumColors;
    attrs.lower_color = code % kNumColors;
    code /= kNumColors;
    attrs.garment = code % kNumGarments;
    attrs.accessory = code / kNumGarments;
    const Image clean = render_person(attrs, config.height, config.width, config.channels);
    for (std::size_t k = 0; k < config.images_per_id; ++k) {
      Image img = clean;
      for (auto& v : img.pixels) v = std::clamp(v + noise(rng), 0.0, 1.0);
      AnnotationRecord rec;
      rec.identity_id = id;
      rec.synthetic = SyntheticImageRef{image_key(index), attrs};
      for (std::size_t c = 0; c < config.captions_per_image; ++c) {
        rec.captions.push_back(describe_person(attrs, c));
      }
      rec.split = k >= config.images_per_id - val_per_id ? "val" : "train";
      ds.images.emplace(rec.synthetic->image_key, std::move(img));
      ds.records.push_back(std::move(rec));
      ++index;
    }
  }
  return ds;
}

void validate_synthetic(const Dataset& ds) {
  validate_records(ds.records);
  std::map<std::size_t, PersonAttributes> by_identity;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& rec = ds.records[i];
    const std::string where = "record " + std::to_string(i);
    if (!rec.synthetic) throw ContractError(where + " is not synthetic");
    const auto& a = rec.synthetic->attributes;
    if (a.upper_color >= kNumColors || a.lower_color >= kNumColors ||
        a.garment >= kNumGarments || a.accessory >= kNumAccessories) {
      throw ContractError(where + " has out-of-range attributes");
    }
    auto [it, inserted] = by_identity.emplace(rec.identity_id, a);
    if (!inserted && !(it->second == a)) {
      throw ContractError(where + " disagrees with earlier attributes of identity " +
                          std::to_string(rec.identity_id));
    }
    if (inserted && !seen.insert({a.upper_color, a.lower_color, a.garment, a.accessory}).second) {
      throw ContractError(where + ": two identities share one attribute tuple");
    }
    for (std::size_t c = 0; c < rec.captions.size(); ++c) {
      if (rec.captions[c] != describe_person(a, c)) {
        throw ContractError(where + " caption " + std::to_string(c) + " does not describe its attributes");
      }
    }
    const Image& img = ds.image_for(rec);
    const Image clean = render_person(a, img.height, img.width, img.channels);
    // Band means of the noisy image must track the clean rendering.
    const auto band = img.height / 4;
    for (std::size_t b = 0; b < 4; ++b) {
      for (std::size_t ch = 0; ch < img.channels; ++ch) {
        double diff = 0.0;
        std::size_t n = 0;
        for (std::size_t r = b * band; r < (b + 1) * band; ++r) {
          for (std::size_t col = 0; col < img.width; ++col, ++n) {
            diff += img.at(r, col, ch) - clean.at(r, col, ch);
          }
        }
        if (std::abs(diff / static_cast<double>(n)) > 0.15) {
          throw ContractError(where + ": pixels do not match attributes in band " + std::to_string(b));
        }
      }
    }
  }
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  save_annotations(dir / "annotations.json", ds.records);
  ArrayFile images;
  images.metadata = {{"kind", "images"}};
  for (const auto& [key, img] : ds.images) {
    images.arrays.push_back({key, {img.height, img.width, img.channels}, img.pixels});
  }
  save_array_file(dir / "images.bin", images);
}

Dataset load_dataset(const std::filesystem::path& annotation_path) {
  Dataset ds;
  ds.records = load_annotations(annotation_path);
  const auto dir = annotation_path.parent_path();
  const bool any_synthetic = std::any_of(ds.records.begin(), ds.records.end(),
                                         [](const auto& r) { return r.synthetic.has_value(); });
  if (any_synthetic) {
    const ArrayFile file = load_array_file(dir / "images.bin");
    for (const auto& a : file.arrays) {
      if (a.shape.size() != 3) throw ParseError("image array '" + a.name + "' is not HxWxC");
      Image img(a.shape[0], a.shape[1], a.shape[2]);
      img.pixels = a.values;
      ds.images.emplace(a.name, std::move(img));
    }
  }
  for (const auto& rec : ds.records) {
    if (rec.synthetic) {
      (void)ds.image_for(rec);
    } else if (!ds.images.count(rec.img_path)) {
      ds.images.emplace(rec.img_path, load_png(dir / rec.img_path));
    }
  }
  return ds;
}

}  // namespace irra
