#include "feddet/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "feddet/rng.hpp"

namespace feddet {

namespace {

constexpr std::uint64_t kGenStream = 0x47454Eu;    // synthetic generation
constexpr std::uint64_t kSplitStream = 0x53504Cu;  // train/test split
constexpr std::uint64_t kPartStream = 0x504152u;   // client partition

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// --- synthetic generation ---

struct Blob {
  // Additive intensity field of the tumor alone, same layout as the image.
  std::vector<double> field;
  double peak = 0.0;
};

void add_gaussian(std::vector<double>& field, int size, double cx, double cy,
                  double sx, double sy, double amp) {
  for (int r = 0; r < size; ++r) {
    const double y = (r + 0.5) / size;
    for (int c = 0; c < size; ++c) {
      const double x = (c + 0.5) / size;
      const double dx = (x - cx) / sx;
      const double dy = (y - cy) / sy;
      field[static_cast<std::size_t>(r) * size + c] +=
          amp * std::exp(-0.5 * (dx * dx + dy * dy));
    }
  }
}

Blob paint_blob(int size, int class_id, double cx, double cy, double radius,
                Rng& rng) {
  Blob blob;
  blob.field.assign(static_cast<std::size_t>(size) * size, 0.0);

  if (class_id == 0) {
    // Irregular diffuse mass: several overlapping soft lobes.
    const int lobes = 3 + static_cast<int>(rng.uniform_index(3));
    for (int l = 0; l < lobes; ++l) {
      const double ox = rng.uniform(-0.35, 0.35) * radius;
      const double oy = rng.uniform(-0.35, 0.35) * radius;
      const double sx = rng.uniform(0.40, 0.62) * radius;
      const double sy = rng.uniform(0.40, 0.62) * radius;
      const double amp = rng.uniform(0.45, 0.75);
      add_gaussian(blob.field, size, cx + ox, cy + oy, sx, sy, amp);
    }
  } else if (class_id == 1) {
    // Compact high-contrast disc with a one-pixel soft rim.
    const double edge = 1.0 / size;
    for (int r = 0; r < size; ++r) {
      const double y = (r + 0.5) / size;
      for (int c = 0; c < size; ++c) {
        const double x = (c + 0.5) / size;
        const double d = std::hypot(x - cx, y - cy);
        double v = 0.0;
        if (d <= radius - edge) {
          v = 0.92;
        } else if (d < radius + edge) {
          const double t = (radius + edge - d) / (2.0 * edge);
          v = 0.92 * t * t * (3.0 - 2.0 * t);
        }
        blob.field[static_cast<std::size_t>(r) * size + c] += v;
      }
    }
  } else {
    // Small soft blob.
    const double sigma = radius / 1.1774;  // 50%-of-peak contour at `radius`
    add_gaussian(blob.field, size, cx, cy, sigma, sigma, 0.80);
  }

  for (double v : blob.field) blob.peak = std::max(blob.peak, v);
  return blob;
}

// Pixel-cover box of the region where the blob reaches half its peak.
BBox contour_box(const Blob& blob, int size) {
  const double threshold = 0.5 * blob.peak;
  int r0 = size, r1 = -1, c0 = size, c1 = -1;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      if (blob.field[static_cast<std::size_t>(r) * size + c] >= threshold) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) throw std::runtime_error("blob vanished below its own half-peak");
  BBox b;
  b.cx = (c0 + c1 + 1) / (2.0 * size);
  b.cy = (r0 + r1 + 1) / (2.0 * size);
  b.w = static_cast<double>(c1 + 1 - c0) / size;
  b.h = static_cast<double>(r1 + 1 - r0) / size;
  return b;
}

Sample generate_one(int size, int class_id, Rng& rng) {
  Sample s;
  s.height = size;
  s.width = size;
  s.pixels.assign(static_cast<std::size_t>(size) * size, 0.0);

  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      s.pixels[static_cast<std::size_t>(r) * size + c] =
          0.06 + rng.normal(0.0, 0.02);

  // Elliptical skull band around the brain region.
  const double band_mid = 0.45, band_half = 0.025;
  for (int r = 0; r < size; ++r) {
    const double y = (r + 0.5) / size - 0.5;
    for (int c = 0; c < size; ++c) {
      const double x = (c + 0.5) / size - 0.5;
      const double d = std::hypot(x / 1.0, y / 1.08);
      if (std::abs(d - band_mid) < band_half)
        s.pixels[static_cast<std::size_t>(r) * size + c] += 0.30;
      else if (d < band_mid - band_half)
        s.pixels[static_cast<std::size_t>(r) * size + c] += 0.05;
    }
  }

  for (int attempt = 0; attempt < 100; ++attempt) {
    double radius, cx, cy;
    if (class_id == 0) {
      radius = rng.uniform(0.15, 0.21);
      cx = rng.uniform(0.30, 0.70);
      cy = rng.uniform(0.30, 0.70);
    } else if (class_id == 1) {
      radius = rng.uniform(0.11, 0.17);
      cx = rng.uniform(0.28, 0.72);
      cy = rng.uniform(0.28, 0.72);
    } else {
      radius = rng.uniform(0.08, 0.12);
      cx = rng.uniform(0.40, 0.60);
      cy = rng.uniform(0.55, 0.72);
    }

    const Blob blob = paint_blob(size, class_id, cx, cy, radius, rng);
    const BBox box = contour_box(blob, size);
    if (!box.inside_unit() || box.x_min() < 0.02 || box.x_max() > 0.98 ||
        box.y_min() < 0.02 || box.y_max() > 0.98)
      continue;

    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
      const double v = clamp01(s.pixels[i] + blob.field[i]);
      s.pixels[i] = std::lround(v * 255.0) / 255.0;
    }
    s.objects.push_back({class_id, box});
    return s;
  }
  throw std::runtime_error("image too small to place a class " +
                           std::to_string(class_id) + " blob");
}

// --- P5 parsing ---

int pgm_token(std::ifstream& f, const std::filesystem::path& path) {
  // Skips whitespace and '#' comments, then reads one decimal integer.
  int ch = f.get();
  for (;;) {
    while (ch != EOF && std::isspace(ch)) ch = f.get();
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = f.get();
      continue;
    }
    break;
  }
  if (ch == EOF || !std::isdigit(ch))
    throw std::runtime_error(path.string() + ": malformed header");
  long v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    if (v > 1000000) throw std::runtime_error(path.string() + ": header value too large");
    ch = f.get();
  }
  if (ch != EOF) f.unget();
  return static_cast<int>(v);
}

// --- labels ---

struct LabelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<GroundTruthObject> parse_labels(const std::filesystem::path& path,
                                            int num_classes) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<GroundTruthObject> objects;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);

    long cls;
    double cx, cy, w, h;
    char trailing[2];
    const int got = std::sscanf(line.c_str(), " %ld %lf %lf %lf %lf %1s", &cls,
                                &cx, &cy, &w, &h, trailing);
    if (got != 5) throw LabelError(where + ": expected `class cx cy w h`");
    if (cls < 0 || cls >= num_classes)
      throw LabelError(where + ": class " + std::to_string(cls) + " out of range [0, " +
                       std::to_string(num_classes) + ")");
    GroundTruthObject obj;
    obj.class_id = static_cast<int>(cls);
    obj.box = {cx, cy, w, h};
    if (!obj.box.inside_unit())
      throw LabelError(where + ": box not fully inside the unit square");
    objects.push_back(obj);
  }
  return objects;
}

}  // namespace

Dataset generate_synthetic(int count, int image_size,
                           const std::array<double, 3>& class_mix,
                           std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  if (image_size < 16)
    throw std::invalid_argument("image_size must be >= 16 to fit a blob");
  double mix_sum = 0.0;
  for (double p : class_mix) {
    if (p < 0.0) throw std::invalid_argument("class_mix entries must be >= 0");
    mix_sum += p;
  }
  if (std::abs(mix_sum - 1.0) > 1e-9)
    throw std::invalid_argument("class_mix must sum to 1");

  const std::vector<double> probs(class_mix.begin(), class_mix.end());
  Dataset out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, kGenStream, static_cast<std::uint64_t>(i)));
    const int class_id = static_cast<int>(rng.categorical(probs));
    out.push_back(generate_one(image_size, class_id, rng));
  }
  return out;
}

Sample read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  char magic[2];
  if (!f.read(magic, 2) || magic[0] != 'P' || magic[1] != '5')
    throw std::runtime_error(path.string() + ": not a binary P5 graymap");

  Sample s;
  s.width = pgm_token(f, path);
  s.height = pgm_token(f, path);
  const int maxval = pgm_token(f, path);
  if (s.width < 1 || s.height < 1)
    throw std::runtime_error(path.string() + ": bad dimensions");
  if (maxval < 1 || maxval > 65535)
    throw std::runtime_error(path.string() + ": maxval out of range");
  f.get();  // single whitespace separating header from payload

  const std::size_t n = static_cast<std::size_t>(s.width) * s.height;
  const int bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(n * bytes_per);
  if (!f.read(reinterpret_cast<char*>(raw.data()),
              static_cast<std::streamsize>(raw.size())))
    throw std::runtime_error(path.string() + ": truncated pixel data");

  s.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bytes_per == 1
                           ? raw[i]
                           : (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
    if (v > static_cast<unsigned>(maxval))
      throw std::runtime_error(path.string() + ": pixel exceeds maxval");
    s.pixels[i] = static_cast<double>(v) / maxval;
  }
  return s;
}

void write_pgm(const std::filesystem::path& path, const Sample& s) {
  if (s.height < 1 || s.width < 1 ||
      s.pixels.size() != static_cast<std::size_t>(s.height) * s.width)
    throw std::invalid_argument("sample has inconsistent dimensions");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << "P5\n" << s.width << ' ' << s.height << "\n255\n";
  std::vector<unsigned char> raw(s.pixels.size());
  for (std::size_t i = 0; i < s.pixels.size(); ++i) {
    const double v = s.pixels[i];
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("pixel outside [0,1]");
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  f.write(reinterpret_cast<const char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("short write to " + path.string());
}

Dataset load_directory(const std::filesystem::path& dir, int num_classes) {
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> images;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      images.push_back(entry.path());
  std::sort(images.begin(), images.end());

  Dataset out;
  out.reserve(images.size());
  for (const auto& img : images) {
    Sample s = read_pgm(img);
    std::filesystem::path label = img;
    label.replace_extension(".txt");
    if (std::filesystem::exists(label)) {
      s.objects = parse_labels(label, num_classes);
    } else {
      std::fprintf(stderr, "warning: %s has no label file, assuming no objects\n",
                   img.string().c_str());
    }
    out.push_back(std::move(s));
  }
  return out;
}

void save_directory(const std::filesystem::path& dir, const Dataset& samples) {
  std::filesystem::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof name, "sample_%05zu", i);
    write_pgm(dir / (std::string(name) + ".pgm"), samples[i]);

    std::ofstream f(dir / (std::string(name) + ".txt"), std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write labels in " + dir.string());
    char line[160];
    for (const auto& obj : samples[i].objects) {
      std::snprintf(line, sizeof line, "%d %.17g %.17g %.17g %.17g\n", obj.class_id,
                    obj.box.cx, obj.box.cy, obj.box.w, obj.box.h);
      f << line;
    }
  }
}

BBox augment_box(const BBox& b, Augment a) {
  switch (a) {
    case Augment::kRot90:
      return {1.0 - b.cy, b.cx, b.h, b.w};
    case Augment::kRot180:
      return {1.0 - b.cx, 1.0 - b.cy, b.w, b.h};
    case Augment::kRot270:
      return {b.cy, 1.0 - b.cx, b.h, b.w};
    case Augment::kFlipH:
      return {1.0 - b.cx, b.cy, b.w, b.h};
    case Augment::kFlipV:
      return {b.cx, 1.0 - b.cy, b.w, b.h};
  }
  throw std::invalid_argument("unknown augmentation");
}

namespace {

Sample transform_pixels(const Sample& in, Augment a) {
  Sample out;
  out.objects = in.objects;
  for (auto& obj : out.objects) obj.box = augment_box(obj.box, a);

  const int h = in.height, w = in.width;
  const bool swaps = a == Augment::kRot90 || a == Augment::kRot270;
  out.height = swaps ? w : h;
  out.width = swaps ? h : w;
  out.pixels.resize(in.pixels.size());

  auto src = [&](int r, int c) { return in.pixels[static_cast<std::size_t>(r) * w + c]; };
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) {
      double v = 0.0;
      switch (a) {
        case Augment::kRot90: v = src(h - 1 - c, r); break;
        case Augment::kRot180: v = src(h - 1 - r, w - 1 - c); break;
        case Augment::kRot270: v = src(c, w - 1 - r); break;
        case Augment::kFlipH: v = src(r, w - 1 - c); break;
        case Augment::kFlipV: v = src(h - 1 - r, c); break;
      }
      out.pixels[static_cast<std::size_t>(r) * out.width + c] = v;
    }
  return out;
}

Sample resize_nn(const Sample& in, int target) {
  if (in.height == target && in.width == target) return in;
  Sample out;
  out.height = target;
  out.width = target;
  out.objects = in.objects;  // normalized boxes are resolution-independent
  out.pixels.resize(static_cast<std::size_t>(target) * target);
  for (int r = 0; r < target; ++r) {
    const int sr = static_cast<int>((static_cast<long long>(r) * in.height) / target);
    for (int c = 0; c < target; ++c) {
      const int sc = static_cast<int>((static_cast<long long>(c) * in.width) / target);
      out.pixels[static_cast<std::size_t>(r) * target + c] =
          in.pixels[static_cast<std::size_t>(sr) * in.width + sc];
    }
  }
  return out;
}

}  // namespace

std::vector<Sample> preprocess(const Sample& s, int target_size,
                               const std::vector<Augment>& augment) {
  if (target_size < 1) throw std::invalid_argument("target_size must be >= 1");
  const Sample base = resize_nn(s, target_size);
  std::vector<Sample> out;
  out.reserve(1 + augment.size());
  out.push_back(base);
  for (Augment a : {Augment::kRot90, Augment::kRot180, Augment::kRot270,
                    Augment::kFlipH, Augment::kFlipV})
    if (std::find(augment.begin(), augment.end(), a) != augment.end())
      out.push_back(transform_pixels(base, a));
  return out;
}

namespace {

int stratum_of(const Sample& s, int num_strata_hint) {
  return s.objects.empty() ? num_strata_hint : s.objects.front().class_id;
}

// Largest-remainder apportionment of `total` across ideal real shares.
std::vector<std::size_t> apportion(const std::vector<double>& ideal, std::size_t total) {
  const std::size_t k = ideal.size();
  std::vector<std::size_t> counts(k);
  std::vector<std::pair<double, std::size_t>> rem(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    counts[i] = static_cast<std::size_t>(std::floor(ideal[i]));
    assigned += counts[i];
    rem[i] = {ideal[i] - std::floor(ideal[i]), i};
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;  // ties keep lower stratum first
  });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % k) {
    ++counts[rem[i].second];
    ++assigned;
  }
  // Floors can overshoot when an ideal share sits a rounding error above an
  // integer; take the surplus back starting from the smallest remainders.
  for (std::size_t i = k; assigned > total;) {
    i = (i == 0) ? k - 1 : i - 1;
    std::size_t& c = counts[rem[i].second];
    if (c > 0) {
      --c;
      --assigned;
    }
  }
  return counts;
}

}  // namespace

std::pair<Dataset, Dataset> split_train_test(const Dataset& samples, double fraction,
                                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("fraction must lie in (0, 1)");
  const std::size_t n = samples.size();
  if (n < 2) throw std::invalid_argument("need at least 2 samples to split");

  int max_class = -1;
  for (const auto& s : samples)
    if (!s.objects.empty()) max_class = std::max(max_class, s.objects.front().class_id);
  const int none_stratum = max_class + 1;

  std::vector<std::vector<std::size_t>> strata(none_stratum + 1);
  for (std::size_t i = 0; i < n; ++i)
    strata[stratum_of(samples[i], none_stratum)].push_back(i);

  // Snap away float noise (0.8 * 60 must mean exactly 48) before the ceiling.
  const std::size_t train_total = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n) - 1e-9));
  std::vector<double> ideal;
  ideal.reserve(strata.size());
  for (const auto& g : strata)
    ideal.push_back(fraction * static_cast<double>(g.size()));
  // Clip quotas to stratum sizes, then apportion the remainder.
  std::vector<std::size_t> take = apportion(ideal, train_total);
  for (std::size_t round = 0; round < strata.size(); ++round) {
    std::size_t overflow = 0;
    for (std::size_t c = 0; c < strata.size(); ++c)
      if (take[c] > strata[c].size()) {
        overflow += take[c] - strata[c].size();
        take[c] = strata[c].size();
      }
    if (overflow == 0) break;
    for (std::size_t c = 0; c < strata.size() && overflow > 0; ++c) {
      const std::size_t room = strata[c].size() - take[c];
      const std::size_t add = std::min(room, overflow);
      take[c] += add;
      overflow -= add;
    }
  }

  std::vector<bool> in_train(n, false);
  for (std::size_t c = 0; c < strata.size(); ++c) {
    auto idx = strata[c];
    Rng rng(derive_seed(seed, kSplitStream, c));
    rng.shuffle(idx);
    for (std::size_t i = 0; i < take[c]; ++i) in_train[idx[i]] = true;
  }

  Dataset train, test;
  for (std::size_t i = 0; i < n; ++i)
    (in_train[i] ? train : test).push_back(samples[i]);
  return {std::move(train), std::move(test)};
}

void PartitionSpec::validate() const {
  if (num_clients < 1) throw std::invalid_argument("num_clients must be >= 1");
  if (mode == Mode::kDirichlet && !(alpha > 0.0))
    throw std::invalid_argument("alpha must be > 0");
}

std::vector<std::vector<std::size_t>> partition_indices(const Dataset& train,
                                                        const PartitionSpec& spec) {
  spec.validate();
  const std::size_t n = train.size();
  const std::size_t clients = static_cast<std::size_t>(spec.num_clients);
  if (n < clients)
    throw std::invalid_argument("fewer samples than clients");

  std::vector<std::vector<std::size_t>> out(clients);

  if (spec.mode == PartitionSpec::Mode::kIid) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (clients > 1) {
      Rng rng(derive_seed(spec.seed, kPartStream));
      rng.shuffle(idx);
    }
    for (std::size_t i = 0; i < n; ++i) out[i % clients].push_back(idx[i]);
    return out;
  }

  int max_class = -1;
  for (const auto& s : train)
    if (!s.objects.empty()) max_class = std::max(max_class, s.objects.front().class_id);
  const int none_stratum = max_class + 1;
  std::vector<std::vector<std::size_t>> strata(none_stratum + 1);
  for (std::size_t i = 0; i < n; ++i)
    strata[stratum_of(train[i], none_stratum)].push_back(i);

  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(spec.seed, kPartStream, attempt));
    for (auto& c : out) c.clear();

    for (auto group : strata) {
      if (group.empty()) continue;
      rng.shuffle(group);
      std::vector<double> props(clients);
      double sum = 0.0;
      for (auto& p : props) {
        p = rng.gamma(spec.alpha);
        sum += p;
      }
      std::vector<double> ideal(clients);
      for (std::size_t k = 0; k < clients; ++k)
        ideal[k] = props[k] / sum * static_cast<double>(group.size());
      const std::vector<std::size_t> counts = apportion(ideal, group.size());
      std::size_t cursor = 0;
      for (std::size_t k = 0; k < clients; ++k)
        for (std::size_t j = 0; j < counts[k]; ++j) out[k].push_back(group[cursor++]);
    }

    const bool all_nonempty =
        std::all_of(out.begin(), out.end(), [](const auto& c) { return !c.empty(); });
    if (all_nonempty) {
      for (auto& c : out) std::sort(c.begin(), c.end());
      return out;
    }
  }
  throw std::runtime_error("dirichlet partition left a client empty 100 times; "
                           "raise alpha or lower num_clients");
}

std::vector<Dataset> partition(const Dataset& train, const PartitionSpec& spec) {
  const auto assignment = partition_indices(train, spec);
  std::vector<Dataset> out(assignment.size());
  for (std::size_t k = 0; k < assignment.size(); ++k) {
    out[k].reserve(assignment[k].size());
    for (std::size_t i : assignment[k]) out[k].push_back(train[i]);
  }
  return out;
}

void write_partition_manifest(const std::filesystem::path& path,
                              const std::vector<std::vector<std::size_t>>& assignment) {
  nlohmann::ordered_json j;
  for (std::size_t k = 0; k < assignment.size(); ++k)
    j[std::to_string(k)] = assignment[k];
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
}

}  // namespace feddet
