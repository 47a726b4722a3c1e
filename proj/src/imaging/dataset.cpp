#include "morphkit/imaging/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "morphkit/common/parallel.hpp"
#include "morphkit/geometry/tps.hpp"

namespace morphkit {

namespace {

const char* kManifestHeader = "path,subject_id,kind,source_a,source_b,landmarks_path";

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw std::invalid_argument("manifest field contains a reserved character: '" + s + "'");
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << kManifestHeader << '\n';
  for (const auto& r : rows) {
    for (const auto* f : {&r.path, &r.source_a, &r.source_b, &r.landmarks_path}) check_field(*f);
    os << r.path << ',' << r.subject_id << ',' << (r.kind == SampleKind::Real ? "real" : "morph") << ','
       << r.source_a << ',' << r.source_b << ',' << r.landmarks_path << '\n';
  }
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line) || split_csv(line) != split_csv(kManifestHeader)) {
    throw std::runtime_error("manifest '" + path.string() + "' has an unexpected header");
  }
  Manifest m;
  m.root = path.parent_path();
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (f.size() != 6) throw std::runtime_error(where + ": expected 6 columns");
    ManifestRow r;
    r.path = f[0];
    try {
      std::size_t used = 0;
      r.subject_id = std::stoi(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::runtime_error(where + ": bad subject_id '" + f[1] + "'");
    }
    if (f[2] == "real") {
      r.kind = SampleKind::Real;
    } else if (f[2] == "morph") {
      r.kind = SampleKind::Morph;
    } else {
      throw std::runtime_error(where + ": kind must be real or morph");
    }
    r.source_a = f[3];
    r.source_b = f[4];
    r.landmarks_path = f[5];
    if (r.kind == SampleKind::Real && (!r.source_a.empty() || !r.source_b.empty())) {
      throw std::runtime_error(where + ": real rows must leave the source columns empty");
    }
    if (r.kind == SampleKind::Morph && (r.source_a.empty() || r.source_b.empty())) {
      throw std::runtime_error(where + ": morph rows need both sources");
    }
    m.rows.push_back(std::move(r));
  }
  return m;
}

namespace {

// Geometry of one synthetic face, in pixels of a 112-pixel frame.
struct FaceShape {
  double cx = 56, cy = 52;
  double jaw_rx = 38, jaw_ry = 44;
  double eye_sep = 18, eye_y = 48, eye_w = 7, eye_h = 3;
  double brow_lift = 9;
  double nose_top = 50, nose_len = 16, nostril_w = 8;
  double mouth_y = 82, mouth_w = 16, mouth_h = 6;
};

LandmarkSet render_shape(const FaceShape& f, double scale) {
  std::vector<Point> p;
  p.reserve(68);
  const double pi = std::numbers::pi;
  for (int i = 0; i <= 16; ++i) {
    const double a = pi - pi * i / 16.0;
    p.push_back({f.cx + f.jaw_rx * std::cos(a), f.cy + f.jaw_ry * std::sin(a)});
  }
  for (int side = -1; side <= 1; side += 2) {
    const double ex = f.cx + side * f.eye_sep;
    for (int i = 0; i < 5; ++i) {
      const double t = (i - 2) / 2.0;
      p.push_back({ex + t * 1.6 * f.eye_w, f.eye_y - f.brow_lift - 2.5 * (1 - t * t)});
    }
  }
  for (int i = 0; i < 4; ++i) p.push_back({f.cx, f.nose_top + f.nose_len * i / 3.0});
  for (int i = 0; i < 5; ++i) {
    const double t = (i - 2) / 2.0;
    p.push_back({f.cx + t * f.nostril_w, f.nose_top + f.nose_len + 4 - 1.5 * (1 - t * t)});
  }
  for (int side = -1; side <= 1; side += 2) {
    const double ex = f.cx + side * f.eye_sep;
    const double w = f.eye_w, h = f.eye_h;
    for (const Point d : {Point{-w, 0}, Point{-w / 3, -h}, Point{w / 3, -h}, Point{w, 0}, Point{w / 3, h},
                          Point{-w / 3, h}}) {
      p.push_back({ex + d.x, f.eye_y + d.y});
    }
  }
  for (int i = 0; i < 12; ++i) {
    const double a = pi + 2 * pi * i / 12.0;
    p.push_back({f.cx + f.mouth_w * std::cos(a), f.mouth_y + f.mouth_h * std::sin(a)});
  }
  for (int i = 0; i < 8; ++i) {
    const double a = pi + 2 * pi * i / 8.0;
    p.push_back({f.cx + 0.6 * f.mouth_w * std::cos(a), f.mouth_y + 0.4 * f.mouth_h * std::sin(a)});
  }
  LandmarkSet l;
  l.points.reserve(p.size());
  for (const Point& q : p) l.points.push_back(scale * q);
  return l;
}

FaceShape sample_shape(Rng& rng, double jitter) {
  std::normal_distribution<double> n(0.0, 1.0);
  auto j = [&](double v) { return v * (1.0 + jitter * std::clamp(n(rng), -2.5, 2.5)); };
  FaceShape f;
  f.cx += 2.0 * std::clamp(n(rng), -2.0, 2.0);
  f.cy += 2.0 * std::clamp(n(rng), -2.0, 2.0);
  f.jaw_rx = j(f.jaw_rx);
  f.jaw_ry = j(f.jaw_ry);
  f.eye_sep = j(f.eye_sep);
  f.eye_y = j(f.eye_y);
  f.eye_w = j(f.eye_w);
  f.eye_h = j(f.eye_h);
  f.brow_lift = j(f.brow_lift);
  f.nose_top = j(f.nose_top);
  f.nose_len = j(f.nose_len);
  f.nostril_w = j(f.nostril_w);
  f.mouth_y = j(f.mouth_y);
  f.mouth_w = j(f.mouth_w);
  f.mouth_h = j(f.mouth_h);
  return f;
}

// Separable Gaussian blur of one plane with edge clamping.
void blur_plane(std::vector<double>& plane, std::size_t w, std::size_t h, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double ks = 0;
  for (int i = -r; i <= r; ++i) ks += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;
  std::vector<double> tmp(plane.size());
  const int iw = static_cast<int>(w), ih = static_cast<int>(h);
  for (int y = 0; y < ih; ++y)
    for (int x = 0; x < iw; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * plane[y * w + std::clamp(x + i, 0, iw - 1)];
      tmp[y * w + x] = s;
    }
  for (int y = 0; y < ih; ++y)
    for (int x = 0; x < iw; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[std::clamp(y + i, 0, ih - 1) * w + x];
      plane[y * w + x] = s;
    }
}

Point group_mean(const LandmarkSet& l, std::size_t from, std::size_t to) {
  Point c{};
  for (std::size_t i = from; i < to; ++i) c = c + l.points[i];
  return (1.0 / static_cast<double>(to - from)) * c;
}

// Smooth random texture with a skin region and dark features anchored to the
// subject's landmarks.
FaceImage render_appearance(Rng& rng, const LandmarkSet& l, std::size_t size) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double scale = static_cast<double>(size) / 112.0;
  FaceImage img(size, size);
  const std::size_t plane = size * size;
  double tint[3];
  for (double& t : tint) t = 0.15 * n(rng);
  const double skin = 0.25 + 0.1 * n(rng);
  const double feature_depth = 0.55 + 0.1 * n(rng);

  const Point face_c = group_mean(l, 0, 17);
  const double face_rx = 0.5 * (l.points[16].x - l.points[0].x);
  const double face_ry = l.points[8].y - l.points[0].y;
  const Point eye_l = group_mean(l, 36, 42), eye_r = group_mean(l, 42, 48);
  const Point brow_l = group_mean(l, 17, 22), brow_r = group_mean(l, 22, 27);
  const Point mouth = group_mean(l, 48, 60), nose = group_mean(l, 31, 36);
  const double eye_rad = 0.5 * (l.points[39].x - l.points[36].x);
  const double mouth_rad = 0.5 * (l.points[54].x - l.points[48].x);

  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> field(plane);
    for (auto& v : field) v = n(rng);
    blur_plane(field, size, size, 5.0 * scale);
    double ss = 0;
    for (double v : field) ss += v * v;
    const double norm = 0.22 / std::sqrt(ss / static_cast<double>(plane) + 1e-300);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double px = static_cast<double>(x), py = static_cast<double>(y);
        auto blob = [&](Point p, double rx, double ry) {
          const double dx = (px - p.x) / rx, dy = (py - p.y) / ry;
          return std::exp(-0.5 * (dx * dx + dy * dy));
        };
        const double dx = (px - face_c.x) / face_rx, dy = (py - face_c.y) / face_ry;
        const double in_face = 1.0 / (1.0 + std::exp(8.0 * (std::sqrt(dx * dx + dy * dy) - 1.0)));
        double v = -0.35 + tint[c] + field[y * size + x] * norm + skin * in_face;
        v -= feature_depth * (blob(eye_l, eye_rad, 0.6 * eye_rad) + blob(eye_r, eye_rad, 0.6 * eye_rad));
        v -= 0.6 * feature_depth * (blob(brow_l, 1.3 * eye_rad, 0.35 * eye_rad) +
                                    blob(brow_r, 1.3 * eye_rad, 0.35 * eye_rad));
        v -= 0.3 * feature_depth * blob(nose, 0.6 * eye_rad, 0.4 * eye_rad);
        v -= 0.8 * feature_depth * blob(mouth, mouth_rad, 0.35 * mouth_rad);
        img.at(c, y, x) = std::clamp(v, -0.95, 0.95);
      }
    }
  }
  return img;
}

std::string real_name(int s, int c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "real/s%03d_c%d", s, c);
  return buf;
}

std::string morph_name(int s, int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "morph/m%03d_%d", s, k);
  return buf;
}

// Round trip through 8 bits so in-memory images equal what is read back.
FaceImage as_stored(const FaceImage& img) { return normalize_image(quantize(img), img.width()); }

}  // namespace

std::vector<Sample> load_samples(const Manifest& manifest, std::size_t image_size) {
  std::vector<Sample> out(manifest.rows.size());
  parallel_for(out.size(), [&](std::size_t i) {
    const ManifestRow& r = manifest.rows[i];
    const RawImage raw = read_ppm(manifest.resolve(r.path));
    Sample& s = out[i];
    s.path = r.path;
    s.image = normalize_image(raw, image_size);
    s.landmarks = read_landmarks(manifest.resolve(r.landmarks_path));
    const double sx = static_cast<double>(image_size) / static_cast<double>(raw.width);
    const double sy = static_cast<double>(image_size) / static_cast<double>(raw.height);
    if (sx != 1.0 || sy != 1.0) {
      for (auto& p : s.landmarks.points) p = {(p.x + 0.5) * sx - 0.5, (p.y + 0.5) * sy - 0.5};
    }
    s.subject = r.subject_id;
    s.kind = r.kind;
    s.source_a = r.source_a;
    s.source_b = r.source_b;
  });
  return out;
}

std::vector<int> manifest_subjects(const Manifest& manifest) {
  std::vector<int> ids;
  for (const auto& r : manifest.rows) ids.push_back(r.subject_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

SubjectSplit split_subjects(std::vector<int> subjects, double train_fraction, double validation_fraction,
                            std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train fraction must lie in (0, 1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation fraction must lie in [0, 1)");
  }
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (subjects.size() < 2) throw std::invalid_argument("a split needs at least 2 subjects");
  Rng rng(mix_seed(seed, 0x5917));
  std::shuffle(subjects.begin(), subjects.end(), rng);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(subjects.size()))), 1,
      subjects.size() - 1);
  SubjectSplit split;
  std::vector<int> train(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(subjects.begin() + static_cast<std::ptrdiff_t>(n_train), subjects.end());
  std::size_t n_val = 0;
  if (validation_fraction > 0.0 && train.size() >= 2) {
    n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::round(validation_fraction * static_cast<double>(train.size()))), 1,
        train.size() - 1);
  }
  split.validation.assign(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(train.begin() + static_cast<std::ptrdiff_t>(n_val), train.end());
  for (auto* v : {&split.train, &split.validation, &split.test}) std::sort(v->begin(), v->end());
  return split;
}

LandmarkSet face_template(std::size_t size) { return render_shape(FaceShape{}, static_cast<double>(size) / 112.0); }

Manifest synth_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.subjects < 2) throw std::invalid_argument("synth_dataset needs at least 2 subjects");
  if (cfg.captures < 1) throw std::invalid_argument("synth_dataset needs at least 1 capture per subject");
  if (cfg.morphs_per_subject < 0 || cfg.morphs_per_subject > cfg.subjects - 1) {
    throw std::invalid_argument("morphs per subject must lie in [0, subjects - 1]");
  }
  if (cfg.image_size < 16) throw std::invalid_argument("image size must be at least 16");
  std::filesystem::create_directories(out_dir / "real");
  std::filesystem::create_directories(out_dir / "morph");

  const auto S = static_cast<std::size_t>(cfg.subjects);
  const auto C = static_cast<std::size_t>(cfg.captures);
  const double scale = static_cast<double>(cfg.image_size) / 112.0;
  std::vector<LandmarkSet> subject_lms(S);
  std::vector<FaceImage> images(S * C);
  std::vector<LandmarkSet> capture_lms(S * C);

  parallel_for(S, [&](std::size_t s) {
    Rng rng(mix_seed(cfg.seed, s));
    subject_lms[s] = render_shape(sample_shape(rng, cfg.shape_jitter), scale);
    const FaceImage base = render_appearance(rng, subject_lms[s], cfg.image_size);
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t c = 0; c < C; ++c) {
      LandmarkSet l = subject_lms[s];
      const Point shift{n(rng) * scale, n(rng) * scale};
      for (auto& p : l.points) p = p + shift + Point{cfg.capture_jitter * scale * n(rng), cfg.capture_jitter * scale * n(rng)};
      FaceImage img = warp_image(base, subject_lms[s], l);
      const double brightness = cfg.brightness_jitter * n(rng);
      for (auto& v : img.values()) v += brightness + cfg.pixel_noise * n(rng);
      img.clamp();
      const std::string name = real_name(static_cast<int>(s), static_cast<int>(c));
      save_face(out_dir / (name + ".ppm"), img);
      write_landmarks(out_dir / (name + ".txt"), l);
      images[s * C + c] = as_stored(img);
      capture_lms[s * C + c] = std::move(l);
    }
  });

  std::vector<ManifestRow> rows;
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::string name = real_name(static_cast<int>(s), static_cast<int>(c));
      rows.push_back({name + ".ppm", static_cast<int>(s), SampleKind::Real, "", "", name + ".txt"});
    }
  }

  // Partners are the nearest subjects by reference geometry.
  const auto M = static_cast<std::size_t>(cfg.morphs_per_subject);
  struct Job {
    std::size_t target, partner, k;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t o = 0; o < S; ++o) {
      if (o == s) continue;
      double acc = 0;
      for (std::size_t i = 0; i < subject_lms[s].size(); ++i) {
        const Point e = subject_lms[s].points[i] - subject_lms[o].points[i];
        acc += e.x * e.x + e.y * e.y;
      }
      d.push_back({acc, o});
    }
    std::sort(d.begin(), d.end());
    for (std::size_t k = 0; k < M; ++k) jobs.push_back({s, d[k].second, k});
  }
  std::vector<ManifestRow> morph_rows(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    const std::size_t ca = job.k % C, cb = (job.k + 1) % C;
    const std::size_t ia = job.target * C + ca, ib = job.partner * C + cb;
    const MorphRecord rec = generate_morph(images[ia], capture_lms[ia], images[ib], capture_lms[ib], cfg.morph);
    const std::string name = morph_name(static_cast<int>(job.target), static_cast<int>(job.k));
    save_face(out_dir / (name + ".ppm"), rec.image);
    write_landmarks(out_dir / (name + ".txt"), rec.landmarks);
    morph_rows[j] = {name + ".ppm",
                     static_cast<int>(job.target),
                     SampleKind::Morph,
                     real_name(static_cast<int>(job.target), static_cast<int>(ca)) + ".ppm",
                     real_name(static_cast<int>(job.partner), static_cast<int>(cb)) + ".ppm",
                     name + ".txt"};
  });
  rows.insert(rows.end(), morph_rows.begin(), morph_rows.end());
  write_manifest(out_dir / "manifest.csv", rows);
  return Manifest{out_dir, rows};
}

}  // namespace morphkit
