#ifndef SPARSEFUSE_SCENE_HPP
#define SPARSEFUSE_SCENE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sparsefuse/common.hpp"
#include "sparsefuse/geometry.hpp"
#include "sparsefuse/jsonio.hpp"

namespace sparsefuse::scene {

using geom::Box3DLidar;
using geom::BevGrid;
using geom::CameraModel;
using geom::Vec2;
using geom::Vec3;

struct LidarPoint {
  double x = 0, y = 0, z = 0, intensity = 0;
};

struct ObjectSpec {
  int category = 0;
  Box3DLidar box;
  std::vector<double> color_signature;  // K-dim, one-hot plus noise
};

struct CameraView {
  CameraModel model;
  std::vector<double> image;  // H x W x 3 row-major, channel-last, values in [0,1]
};

struct SceneSample {
  int scene_id = 0;
  std::vector<LidarPoint> points;
  std::vector<CameraView> cameras;
  std::vector<ObjectSpec> objects;
};

struct DatasetSplit {
  std::vector<int> train_ids;
  std::vector<int> val_ids;
  uint64_t seed = 0;
};

// Per-category box templates. Categories 4 and 5 share a template on purpose:
// they are only separable by color, which is what gives the camera branch an
// edge over shape-only LiDAR evidence.
struct CategoryTemplate {
  Vec3 size;
  double r = 0.5, g = 0.5, b = 0.5;
};

struct GeneratorConfig {
  int num_categories = 6;
  BevGrid grid = BevGrid::make(-24, 24, -24, 24, 2.0);
  int num_cameras = 2;
  int image_width = 64, image_height = 40;
  double focal = 40.0;
  double camera_height = 1.9;

  int min_objects = 3, max_objects = 5;
  double min_center_dist = 6.0;   // rejection radius between BEV centers
  double min_sensor_dist = 5.0;   // keep objects away from the sensor origin

  int samples_per_face = 18;    // candidate LiDAR points per box face
  // Dropout ramps linearly from 0 at dropout_start to 1 at
  // dropout_full_range; beyond that no point survives.
  double dropout_start = 15.0;
  double dropout_full_range = 20.0;
  int ground_points = 120;
  double size_jitter = 0.05;
  double signature_noise = 0.05;

  // Fraction of objects forced into the far, camera-visible band where the
  // dropout law leaves (almost) no LiDAR points.
  double far_fraction = 0.15;
  double far_range_lo = 20.5, far_range_hi = 23.0;

  std::vector<CategoryTemplate> categories = {
      {{4.2, 1.9, 1.6}, 0.20, 0.35, 0.95},   // car-like, blue
      {{7.2, 2.6, 3.0}, 0.95, 0.60, 0.15},   // truck-like, orange
      {{0.7, 0.7, 1.7}, 0.25, 0.90, 0.30},   // pedestrian-like, green
      {{3.2, 0.5, 0.9}, 0.90, 0.90, 0.25},   // barrier-like, yellow
      {{2.1, 0.77, 1.47}, 0.95, 0.20, 0.20},  // two-wheeler A, red
      {{1.7, 0.60, 1.28}, 0.20, 0.90, 0.95},  // two-wheeler B, cyan
  };
  std::vector<double> category_weights = {1.0, 1.0, 1.0, 1.0, 1.2, 1.2};

  void validate() const {
    if (num_categories < 2) throw ConfigError("generator: need at least 2 categories");
    if (num_cameras < 1) throw ConfigError("generator: need at least 1 camera");
    if (static_cast<int>(categories.size()) != num_categories)
      throw ConfigError("generator: category template count != num_categories");
    if (static_cast<int>(category_weights.size()) != num_categories)
      throw ConfigError("generator: category weight count != num_categories");
    double area = (grid.x_max - grid.x_min) * (grid.y_max - grid.y_min);
    if (max_objects * min_center_dist * min_center_dist > 0.5 * area)
      throw ConfigError("generator: grid cannot fit the requested object count");
    if (max_objects < min_objects) throw ConfigError("generator: max_objects < min_objects");
  }
};

// Cameras sit at the origin, gravity-aligned, looking along +X and -X (then
// +Y, -Y for rigs with more views). Gravity alignment keeps the box yaw
// transfer exact.
inline CameraModel make_camera(const GeneratorConfig& cfg, int view_id) {
  static const double azim[4] = {0.0, M_PI, M_PI / 2, -M_PI / 2};
  double a = azim[view_id % 4];
  CameraModel cam;
  cam.view_id = view_id;
  cam.image_width = cfg.image_width;
  cam.image_height = cfg.image_height;
  cam.intrinsics.m = {cfg.focal, 0, cfg.image_width / 2.0,
                      0, cfg.focal, cfg.image_height / 2.0,
                      0, 0, 1};
  // cam_x = -lidar_y, cam_y = -lidar_z, cam_z = +lidar_x, then yaw the rig.
  geom::Mat3 axis;
  axis.m = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  cam.rotation = axis * geom::Mat3::rot_z(-a);
  Vec3 center{0, 0, cfg.camera_height};
  Vec3 rc = cam.rotation * center;
  cam.translation = {-rc.x, -rc.y, -rc.z};
  return cam;
}

inline double horizontal_fov(const GeneratorConfig& cfg) {
  return 2.0 * std::atan(cfg.image_width / (2.0 * cfg.focal));
}

inline double dropout_probability(double range, const GeneratorConfig& cfg) {
  if (cfg.dropout_full_range <= cfg.dropout_start)
    return range >= cfg.dropout_full_range ? 1.0 : 0.0;
  return std::clamp((range - cfg.dropout_start) /
                        (cfg.dropout_full_range - cfg.dropout_start),
                    0.0, 1.0);
}

namespace detail {

inline int weighted_pick(Rng& rng, const std::vector<double>& w) {
  double total = 0;
  for (double v : w) total += v;
  double r = rng.uniform() * total;
  for (size_t i = 0; i < w.size(); ++i) {
    r -= w[i];
    if (r < 0) return static_cast<int>(i);
  }
  return static_cast<int>(w.size()) - 1;
}

inline bool center_visible(const Vec3& c, const std::vector<CameraModel>& cams) {
  for (const auto& cam : cams) {
    auto ip = geom::project_lidar_to_image(c, cam);
    if (ip && geom::in_image(*ip, cam)) return true;
  }
  return false;
}

// Uniform sample on one of the four side faces or the top face.
inline Vec3 sample_on_face(Rng& rng, const Box3DLidar& box, int face) {
  double l = box.size.x, w = box.size.y, h = box.size.z;
  double a = rng.uniform(-0.5, 0.5), b = rng.uniform(-0.5, 0.5);
  Vec3 local;
  switch (face) {
    case 0: local = {0.5 * l, a * w, b * h}; break;   // front
    case 1: local = {-0.5 * l, a * w, b * h}; break;  // rear
    case 2: local = {a * l, 0.5 * w, b * h}; break;   // left
    case 3: local = {a * l, -0.5 * w, b * h}; break;  // right
    default: local = {a * l, b * w, 0.5 * h}; break;  // top
  }
  return box.center + geom::Mat3::rot_z(box.yaw) * local;
}

inline void fill_rect(std::vector<double>& img, int W, int H, double cu, double cv,
                      double half_u, double half_v, double r, double g, double b) {
  int u0 = std::max(0, static_cast<int>(std::floor(cu - half_u)));
  int u1 = std::min(W - 1, static_cast<int>(std::ceil(cu + half_u)));
  int v0 = std::max(0, static_cast<int>(std::floor(cv - half_v)));
  int v1 = std::min(H - 1, static_cast<int>(std::ceil(cv + half_v)));
  for (int v = v0; v <= v1; ++v)
    for (int u = u0; u <= u1; ++u) {
      size_t idx = (static_cast<size_t>(v) * W + u) * 3;
      img[idx] = r;
      img[idx + 1] = g;
      img[idx + 2] = b;
    }
}

}  // namespace detail

// Deterministic scene synthesis. Everything persisted is quantized through
// float32 so that serialization round trips are bit-exact.
inline SceneSample generate_scene(uint64_t seed, const GeneratorConfig& cfg, int scene_id = 0) {
  cfg.validate();
  Rng rng = Rng(splitmix64(seed ^ splitmix64(static_cast<uint64_t>(scene_id) + 0x5ce4e5ull)));

  SceneSample s;
  s.scene_id = scene_id;
  for (int v = 0; v < cfg.num_cameras; ++v) {
    CameraView view;
    view.model = make_camera(cfg, v);
    view.image.assign(static_cast<size_t>(cfg.image_width) * cfg.image_height * 3, 0.12);
    s.cameras.push_back(std::move(view));
  }
  std::vector<CameraModel> cams;
  for (auto& v : s.cameras) cams.push_back(v.model);

  // Place objects with center-distance rejection.
  int n_objects = cfg.min_objects == cfg.max_objects
                      ? cfg.max_objects
                      : rng.uniform_int(cfg.min_objects, cfg.max_objects);
  double hfov = horizontal_fov(cfg);
  for (int i = 0; i < n_objects; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      int cat = detail::weighted_pick(rng, cfg.category_weights);
      const auto& tpl = cfg.categories[cat];
      Box3DLidar box;
      double jx = 1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter);
      double jy = 1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter);
      double jz = 1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter);
      box.size = {tpl.size.x * jx, tpl.size.y * jy, tpl.size.z * jz};
      box.yaw = rng.uniform(-M_PI, M_PI);
      box.velocity = {0, 0};

      bool far = rng.uniform() < cfg.far_fraction;
      double x, y;
      if (far) {
        // Far band inside a camera cone: LiDAR dropout leaves it dark, the
        // camera still sees it.
        int view = rng.uniform_int(0, cfg.num_cameras - 1);
        static const double azim[4] = {0.0, M_PI, M_PI / 2, -M_PI / 2};
        double a = azim[view % 4] + rng.uniform(-0.4, 0.4) * hfov;
        double r = rng.uniform(cfg.far_range_lo, cfg.far_range_hi);
        x = r * std::cos(a);
        y = r * std::sin(a);
      } else {
        x = rng.uniform(cfg.grid.x_min + 1.0, cfg.grid.x_max - 1.0);
        y = rng.uniform(cfg.grid.y_min + 1.0, cfg.grid.y_max - 1.0);
      }
      if (!cfg.grid.contains(x, y)) continue;
      if (std::hypot(x, y) < cfg.min_sensor_dist) continue;
      bool clash = false;
      for (const auto& other : s.objects) {
        double dx = other.box.center.x - x, dy = other.box.center.y - y;
        if (dx * dx + dy * dy < cfg.min_center_dist * cfg.min_center_dist) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      box.center = {x, y, box.size.z * 0.5};

      ObjectSpec obj;
      obj.category = cat;
      obj.box = box;
      obj.color_signature.assign(cfg.num_categories, 0.0);
      for (int k = 0; k < cfg.num_categories; ++k) {
        double v = (k == cat ? 1.0 : 0.0) + rng.uniform(-cfg.signature_noise, cfg.signature_noise);
        obj.color_signature[k] = std::max(0.0, v);
      }
      s.objects.push_back(std::move(obj));
      placed = true;
    }
    if (!placed) throw ConfigError("generator: grid cannot fit the requested object count");
  }

  // LiDAR points on box faces, thinned by the range-dependent dropout law.
  for (auto& obj : s.objects) {
    int kept = 0;
    for (int face = 0; face < 5; ++face) {
      for (int k = 0; k < cfg.samples_per_face; ++k) {
        Vec3 p = detail::sample_on_face(rng, obj.box, face);
        double drop = dropout_probability(std::hypot(p.x, p.y), cfg);
        double roll = rng.uniform();
        if (roll < drop) continue;
        s.points.push_back({p.x, p.y, p.z, 0.3 + 0.4 * rng.uniform()});
        ++kept;
      }
    }
    // Generator guarantee: an object no camera sees keeps one LiDAR point.
    if (kept == 0 && !detail::center_visible(obj.box.center, cams)) {
      Vec3 p = obj.box.center + Vec3{0, 0, obj.box.size.z * 0.5};
      s.points.push_back({p.x, p.y, p.z, 0.5});
    }
  }

  // Ground plane points under the same dropout law: cheap heatmap negatives.
  for (int k = 0; k < cfg.ground_points; ++k) {
    double x = rng.uniform(cfg.grid.x_min, cfg.grid.x_max);
    double y = rng.uniform(cfg.grid.y_min, cfg.grid.y_max);
    double drop = dropout_probability(std::hypot(x, y), cfg);
    double roll = rng.uniform();
    if (roll < drop) continue;
    s.points.push_back({x, y, 0.0, 0.2 + 0.2 * rng.uniform()});
  }

  // Render: painter's order far-to-near, one filled rectangle per object,
  // centered at the projected box center, colored by the signature mix.
  for (auto& view : s.cameras) {
    std::vector<std::pair<double, const ObjectSpec*>> order;
    for (const auto& obj : s.objects) {
      auto ip = geom::project_lidar_to_image(obj.box.center, view.model);
      if (!ip || !geom::in_image(*ip, view.model)) continue;
      order.emplace_back(ip->depth, &obj);
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    for (auto& [depth, obj] : order) {
      auto ip = *geom::project_lidar_to_image(obj->box.center, view.model);
      double umin = 1e30, umax = -1e30, vmin = 1e30, vmax = -1e30;
      for (const auto& c : geom::box_corners(obj->box)) {
        auto cp = geom::project_lidar_to_image(c, view.model);
        if (!cp) continue;
        umin = std::min(umin, cp->u);
        umax = std::max(umax, cp->u);
        vmin = std::min(vmin, cp->v);
        vmax = std::max(vmax, cp->v);
      }
      if (umax < umin) continue;
      double half_u = std::max(1.0, 0.5 * (umax - umin));
      double half_v = std::max(1.0, 0.5 * (vmax - vmin));
      double r = 0, g = 0, b = 0, total = 0;
      for (int k = 0; k < cfg.num_categories; ++k) {
        double w = obj->color_signature[k];
        r += w * cfg.categories[k].r;
        g += w * cfg.categories[k].g;
        b += w * cfg.categories[k].b;
        total += w;
      }
      if (total > 0) {
        r /= total;
        g /= total;
        b /= total;
      }
      detail::fill_rect(view.image, view.model.image_width, view.model.image_height,
                        ip.u, ip.v, half_u, half_v, r, g, b);
    }
  }

  // Quantize everything that gets persisted.
  for (auto& p : s.points) {
    p.x = q32(p.x);
    p.y = q32(p.y);
    p.z = q32(p.z);
    p.intensity = q32(p.intensity);
  }
  for (auto& obj : s.objects) {
    auto& bx = obj.box;
    bx.center = {q32(bx.center.x), q32(bx.center.y), q32(bx.center.z)};
    bx.size = {q32(bx.size.x), q32(bx.size.y), q32(bx.size.z)};
    bx.yaw = q32(geom::normalize_angle(bx.yaw));
    bx.velocity = {q32(bx.velocity.x), q32(bx.velocity.y)};
    for (auto& v : obj.color_signature) v = q32(v);
  }
  for (auto& view : s.cameras) {
    for (auto& v : view.image) v = q32(v);
    for (auto& m : view.model.intrinsics.m) m = q32(m);
    for (auto& m : view.model.rotation.m) m = q32(m);
    auto& t = view.model.translation;
    t = {q32(t.x), q32(t.y), q32(t.z)};
  }
  return s;
}

// ---------------------------------------------------------------------------
// Persistence: JSON with fixed key order, floats at 9 significant digits.

inline std::string serialize_scene(const SceneSample& s) {
  JsonWriter w;
  w.begin_object();
  w.kv("scene_id", s.scene_id);
  w.key("points");
  w.begin_array();
  for (const auto& p : s.points) {
    w.begin_array();
    w.value(p.x);
    w.value(p.y);
    w.value(p.z);
    w.value(p.intensity);
    w.end_array();
  }
  w.end_array();
  w.key("cameras");
  w.begin_array();
  for (const auto& view : s.cameras) {
    const auto& m = view.model;
    w.begin_object();
    w.kv("view_id", m.view_id);
    w.kv("width", m.image_width);
    w.kv("height", m.image_height);
    w.array("intrinsics", std::vector<double>(m.intrinsics.m.begin(), m.intrinsics.m.end()));
    w.array("rotation", std::vector<double>(m.rotation.m.begin(), m.rotation.m.end()));
    w.array("translation", std::vector<double>{m.translation.x, m.translation.y, m.translation.z});
    w.array("image", view.image);
    w.end_object();
  }
  w.end_array();
  w.key("objects");
  w.begin_array();
  for (const auto& o : s.objects) {
    w.begin_object();
    w.kv("category", o.category);
    w.array("center", std::vector<double>{o.box.center.x, o.box.center.y, o.box.center.z});
    w.array("size", std::vector<double>{o.box.size.x, o.box.size.y, o.box.size.z});
    w.kv("yaw", o.box.yaw);
    w.array("velocity", std::vector<double>{o.box.velocity.x, o.box.velocity.y});
    w.array("color_signature", o.color_signature);
    w.end_object();
  }
  w.end_array();
  w.end_object();
  return w.str();
}

inline void save_scene(const std::string& path, const SceneSample& s) {
  write_text_file(path, serialize_scene(s));
}

namespace detail {
inline std::vector<double> num_array(const json& j, size_t n, const std::string& what) {
  if (!j.is_array() || j.size() != n)
    throw ConfigError(what + ": expected array of " + std::to_string(n));
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = q32(j[i].get<double>());
  return out;
}
}  // namespace detail

inline SceneSample load_scene(const std::string& path) {
  json j = parse_json(read_text_file(path), path);
  SceneSample s;
  s.scene_id = require_field(j, "scene_id", path).get<int>();
  for (const auto& pj : require_field(j, "points", path)) {
    auto v = detail::num_array(pj, 4, path + ": point");
    s.points.push_back({v[0], v[1], v[2], v[3]});
  }
  for (const auto& cj : require_field(j, "cameras", path)) {
    CameraView view;
    auto& m = view.model;
    m.view_id = require_field(cj, "view_id", path).get<int>();
    m.image_width = require_field(cj, "width", path).get<int>();
    m.image_height = require_field(cj, "height", path).get<int>();
    auto K = detail::num_array(require_field(cj, "intrinsics", path), 9, path + ": intrinsics");
    auto R = detail::num_array(require_field(cj, "rotation", path), 9, path + ": rotation");
    auto t = detail::num_array(require_field(cj, "translation", path), 3, path + ": translation");
    std::copy(K.begin(), K.end(), m.intrinsics.m.begin());
    std::copy(R.begin(), R.end(), m.rotation.m.begin());
    m.translation = {t[0], t[1], t[2]};
    const auto& img = require_field(cj, "image", path);
    size_t expect = static_cast<size_t>(m.image_width) * m.image_height * 3;
    if (img.size() != expect) throw ConfigError(path + ": image raster size mismatch");
    view.image.resize(expect);
    for (size_t i = 0; i < expect; ++i) view.image[i] = q32(img[i].get<double>());
    s.cameras.push_back(std::move(view));
  }
  for (const auto& oj : require_field(j, "objects", path)) {
    ObjectSpec o;
    o.category = require_field(oj, "category", path).get<int>();
    auto c = detail::num_array(require_field(oj, "center", path), 3, path + ": center");
    auto sz = detail::num_array(require_field(oj, "size", path), 3, path + ": size");
    auto vel = detail::num_array(require_field(oj, "velocity", path), 2, path + ": velocity");
    o.box.center = {c[0], c[1], c[2]};
    o.box.size = {sz[0], sz[1], sz[2]};
    o.box.yaw = q32(require_field(oj, "yaw", path).get<double>());
    o.box.velocity = {vel[0], vel[1]};
    for (const auto& v : require_field(oj, "color_signature", path))
      o.color_signature.push_back(q32(v.get<double>()));
    s.objects.push_back(std::move(o));
  }
  return s;
}

inline std::string scene_path(const std::string& root, const std::string& split, int scene_id) {
  return root + "/" + split + "/" + std::to_string(scene_id) + ".json";
}

inline bool scenes_equal(const SceneSample& a, const SceneSample& b) {
  return serialize_scene(a) == serialize_scene(b);
}

}  // namespace sparsefuse::scene

#endif  // SPARSEFUSE_SCENE_HPP
