#pragma once

// Text guidance, view selection, image editing and part segmentation behind
// one provider contract. Fixture mode replays canned responses keyed by a
// hash of the canonical request; Live mode posts the same request as JSON.
// Offline mode has no provider and only the built-in fallbacks work.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "voxedit/edit_region.hpp"
#include "voxedit/error.hpp"
#include "voxedit/flow.hpp"
#include "voxedit/geometry.hpp"
#include "voxedit/grid_io.hpp"
#include "voxedit/hash.hpp"
#include "voxedit/voxel.hpp"

namespace voxedit {

using nlohmann::json;

inline std::string base64_encode(const std::string& bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<std::string::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

inline std::string base64_decode(std::string text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  std::size_t pad = 0;
  while (!text.empty() && text.back() == '=') text.pop_back(), ++pad;
  require(pad <= 2 && text.size() % 4 != 1, ErrorCode::GuidanceSchemaFault, "malformed base64 payload");
  try {
    return std::string(It(text.begin()), It(text.end()));
  } catch (const std::exception&) {
    fail(ErrorCode::GuidanceSchemaFault, "malformed base64 payload");
  }
}

// ---------------------------------------------------------------------------

struct GuidanceBundle {
  std::string original_description;
  std::vector<std::string> target_part_names;
  EditType edit_type = EditType::Modification;
  std::string new_complete_description;
  std::string new_part_description;  // may be empty for deletions
  std::string stage1_text;
  std::string stage2_text;

  friend bool operator==(const GuidanceBundle&, const GuidanceBundle&) = default;
};

inline json to_json(const GuidanceBundle& b) {
  return {{"original_description", b.original_description},
          {"target_part_names", b.target_part_names},
          {"edit_type", to_string(b.edit_type)},
          {"new_complete_description", b.new_complete_description},
          {"new_part_description", b.new_part_description},
          {"stage1_text", b.stage1_text},
          {"stage2_text", b.stage2_text}};
}

inline GuidanceBundle bundle_from_json(const json& j) {
  const auto schema = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::GuidanceSchemaFault, "guidance response: " + what);
  };
  schema(j.is_object(), "not an object");
  const auto text = [&](const char* key) {
    schema(j.contains(key), std::string("missing ") + key);
    schema(j.at(key).is_string(), std::string(key) + " is not a string");
    return j.at(key).get<std::string>();
  };
  GuidanceBundle b;
  b.original_description = text("original_description");
  try {
    b.edit_type = parse_edit_type(text("edit_type"));
  } catch (const Error&) {
    schema(false, "unknown edit_type");
  }
  b.new_complete_description = text("new_complete_description");
  b.new_part_description = text("new_part_description");
  b.stage1_text = text("stage1_text");
  b.stage2_text = text("stage2_text");
  schema(j.contains("target_part_names") && j.at("target_part_names").is_array(), "target_part_names not a list");
  for (const auto& n : j.at("target_part_names")) {
    schema(n.is_string() && !n.get<std::string>().empty(), "target part name is not a non-empty string");
    b.target_part_names.push_back(n.get<std::string>());
  }

  schema(!b.original_description.empty() && !b.new_complete_description.empty(), "empty description");
  schema(!b.target_part_names.empty(), "no target parts");
  if (b.edit_type != EditType::Deletion) {
    schema(!b.new_part_description.empty(), "empty new_part_description");
    schema(!b.stage1_text.empty() && !b.stage2_text.empty(), "empty stage text");
  }
  return b;
}

// ---------------------------------------------------------------------------

struct ViewDescriptor {
  int id = 0;
  double azimuth = 0.0;    // degrees
  double elevation = 0.0;  // degrees
  std::string payload;     // rendered image bytes; may be empty

  /// Unit vector from the object toward the camera.
  std::array<double, 3> direction() const {
    const double az = azimuth * std::numbers::pi / 180.0, el = elevation * std::numbers::pi / 180.0;
    return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
  }
};

struct ViewSet {
  std::vector<ViewDescriptor> views;

  void validate() const {
    require(!views.empty(), ErrorCode::Precondition, "view set is empty");
    std::set<int> ids;
    for (const auto& v : views)
      require(ids.insert(v.id).second, ErrorCode::Precondition, "duplicate view id " + std::to_string(v.id));
  }

  std::vector<int> ids() const {
    std::vector<int> out;
    for (const auto& v : views) out.push_back(v.id);
    return out;
  }

  const ViewDescriptor& at(int id) const {
    for (const auto& v : views)
      if (v.id == id) return v;
    fail(ErrorCode::Precondition, "no view with id " + std::to_string(id));
  }
};

/// 8 views: azimuths 0..315 step 45 at elevation 0. 24 views: the same
/// azimuths at elevations -30, 0, 30.
inline ViewSet canonical_views(std::size_t count) {
  require(count == 8 || count == 24, ErrorCode::Precondition, "canonical view sets have 8 or 24 views");
  ViewSet vs;
  const std::vector<double> elevations = count == 8 ? std::vector<double>{0.0} : std::vector<double>{-30.0, 0.0, 30.0};
  int id = 0;
  for (double el : elevations)
    for (int a = 0; a < 8; ++a) vs.views.push_back({id++, 45.0 * a, el, {}});
  return vs;
}

namespace detail {

/// Whether the ray from the center of `start` along `dir` hits another occupied voxel.
inline bool occluded(const VoxelMask& occ, const VoxelCoord& start, const std::array<double, 3>& dir) {
  const int r = occ.resolution();
  double p[3] = {start.x + 0.5, start.y + 0.5, start.z + 0.5};
  constexpr double kStep = 0.25;
  for (;;) {
    for (int a = 0; a < 3; ++a) p[a] += kStep * dir[a];
    const VoxelCoord c{static_cast<int>(std::floor(p[0])), static_cast<int>(std::floor(p[1])),
                       static_cast<int>(std::floor(p[2]))};
    if (c.x < 0 || c.y < 0 || c.z < 0 || c.x >= r || c.y >= r || c.z >= r) return false;
    if (c != start && occ.contains(c)) return true;
  }
}

/// Projected area toward `dir` of the voxel's faces that border empty space.
inline double exposed_area(const VoxelMask& occ, const VoxelCoord& v, const std::array<double, 3>& dir) {
  static constexpr int kN[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  double area = 0.0;
  for (const auto& n : kN) {
    const VoxelCoord c{v.x + n[0], v.y + n[1], v.z + n[2]};
    if (occ.dims().contains(c) && occ.contains(c)) continue;
    area += std::max(0.0, dir[0] * n[0] + dir[1] * n[1] + dir[2] * n[2]);
  }
  return area;
}

}  // namespace detail

/// Visibility score of `targets` from a view: projected exposed face area of
/// the target voxels whose centers have a clear line of sight to the camera.
inline double view_visibility(const ViewDescriptor& view, const VoxelMask& occupancy, const CoordSet& targets) {
  const auto dir = view.direction();
  double score = 0.0;
  for (const auto& v : targets) {
    const double area = detail::exposed_area(occupancy, v, dir);
    if (area <= 0.0 || detail::occluded(occupancy, v, dir)) continue;
    score += area;
  }
  return score;
}

/// Highest visibility score; ties go to the lowest id.
inline int heuristic_best_view(const ViewSet& views, const VoxelMask& occupancy, const CoordSet& targets) {
  views.validate();
  int best = views.views.front().id;
  double best_score = -1.0;
  for (const auto& v : views.views) {
    const double s = view_visibility(v, occupancy, targets);
    if (s > best_score || (s == best_score && v.id < best)) best = v.id, best_score = s;
  }
  return best;
}

/// Orthographic depth image (binary PGM, R x R) of the occupancy seen from a view.
inline std::string render_depth_pgm(const ViewDescriptor& view, const VoxelMask& occupancy) {
  const int r = occupancy.resolution();
  const auto d = view.direction();
  // Image basis: u horizontal (perpendicular to d in the xy plane), w = d x u.
  std::array<double, 3> u{-std::sin(view.azimuth * std::numbers::pi / 180.0),
                          std::cos(view.azimuth * std::numbers::pi / 180.0), 0.0};
  const std::array<double, 3> w{d[1] * u[2] - d[2] * u[1], d[2] * u[0] - d[0] * u[2], d[0] * u[1] - d[1] * u[0]};
  const double half = r / 2.0, reach = r * std::sqrt(3.0) / 2.0 + 1.0;
  std::string out = "P5\n" + std::to_string(r) + " " + std::to_string(r) + "\n255\n";
  for (int row = 0; row < r; ++row)
    for (int col = 0; col < r; ++col) {
      const double a = col + 0.5 - half, b = half - (row + 0.5);
      std::uint8_t pixel = 0;
      for (double s = reach; s > -reach; s -= 0.25) {
        const double p[3] = {half + a * u[0] + b * w[0] + s * d[0], half + a * u[1] + b * w[1] + s * d[1],
                             half + a * u[2] + b * w[2] + s * d[2]};
        const VoxelCoord c{static_cast<int>(std::floor(p[0])), static_cast<int>(std::floor(p[1])),
                           static_cast<int>(std::floor(p[2]))};
        if (occupancy.dims().contains(c) && occupancy.contains(c)) {
          pixel = static_cast<std::uint8_t>(std::lround(255.0 * (s + reach) / (2.0 * reach)));
          break;
        }
      }
      out.push_back(static_cast<char>(pixel));
    }
  return out;
}

inline ViewSet render_views(ViewSet views, const VoxelMask& occupancy) {
  for (auto& v : views.views) v.payload = render_depth_pgm(v, occupancy);
  return views;
}

// ---------------------------------------------------------------------------
// Toy encoders standing in for the text and image conditioning networks.

inline const std::vector<std::string>& shape_vocabulary() {
  static const std::vector<std::string> words = {"sphere", "box", "dumbbell"};
  return words;
}

inline std::vector<double> hash_embedding(std::uint64_t seed, std::size_t dim = kEmbeddingDim) {
  std::vector<double> e(dim);
  for (auto& x : e) x = static_cast<double>(splitmix64(seed) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  return e;
}

/// One-hot on the earliest shape word in the text, otherwise a hash embedding.
inline Condition text_condition(const std::string& text) {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  std::size_t best_pos = std::string::npos, best = 0;
  for (std::size_t i = 0; i < shape_vocabulary().size(); ++i) {
    const auto pos = lower.find(shape_vocabulary()[i]);
    if (pos < best_pos) best_pos = pos, best = i;
  }
  if (best_pos != std::string::npos) return Condition::one_hot(best);
  return Condition::text(hash_embedding(fnv1a(lower)));
}

inline Condition image_condition(const std::string& payload) {
  require(!payload.empty(), ErrorCode::Precondition, "image payload is empty");
  return Condition::image(hash_embedding(fnv1a(payload)));
}

// ---------------------------------------------------------------------------

struct ProviderConfig {
  enum class Mode { Fixture, Live, Offline };
  Mode mode = Mode::Offline;
  std::string endpoint;  // http://host:port/path
  std::filesystem::path fixture_dir;
  double timeout = 30.0;  // seconds
  int retries = 0;

  void validate() const {
    if (mode == Mode::Fixture)
      require(!fixture_dir.empty(), ErrorCode::ConfigFault, "fixture mode requires a fixture directory");
    if (mode == Mode::Live) require(!endpoint.empty(), ErrorCode::ConfigFault, "live mode requires an endpoint");
    require(std::isfinite(timeout) && timeout > 0.0, ErrorCode::ConfigFault, "provider timeout must be positive");
    require(retries >= 0 && retries <= 1, ErrorCode::ConfigFault, "provider retries must be 0 or 1");
  }

  /// VOXEDIT_PROVIDER_ENDPOINT selects Live mode; VOXEDIT_PROVIDER_TIMEOUT sets the timeout.
  static ProviderConfig from_env() {
    ProviderConfig c;
    if (const char* e = std::getenv("VOXEDIT_PROVIDER_ENDPOINT"); e && *e) {
      c.mode = Mode::Live;
      c.endpoint = e;
    }
    if (const char* t = std::getenv("VOXEDIT_PROVIDER_TIMEOUT"); t && *t) {
      char* end = nullptr;
      c.timeout = std::strtod(t, &end);
      require(end && *end == '\0', ErrorCode::ConfigFault, "VOXEDIT_PROVIDER_TIMEOUT is not a number");
    }
    return c;
  }
};

inline std::string to_string(ProviderConfig::Mode m) {
  switch (m) {
    case ProviderConfig::Mode::Fixture: return "fixture";
    case ProviderConfig::Mode::Live: return "live";
    case ProviderConfig::Mode::Offline: return "offline";
  }
  return "?";
}

inline ProviderConfig::Mode parse_provider_mode(const std::string& s) {
  if (s == "fixture") return ProviderConfig::Mode::Fixture;
  if (s == "live") return ProviderConfig::Mode::Live;
  if (s == "offline") return ProviderConfig::Mode::Offline;
  fail(ErrorCode::ConfigFault, "unknown provider mode '" + s + "'");
}

/// Network boundary for Live mode.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string post(const std::string& endpoint, const std::string& body, double timeout) = 0;
};

class HttpTransport final : public Transport {
 public:
  std::string post(const std::string& endpoint, const std::string& body, double timeout) override {
    const auto scheme_end = endpoint.find("://");
    require(scheme_end != std::string::npos, ErrorCode::ConfigFault, "endpoint needs a scheme: " + endpoint);
    const auto path_start = endpoint.find('/', scheme_end + 3);
    const std::string base = endpoint.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
    httplib::Client client(base);
    const auto sec = static_cast<time_t>(timeout);
    const auto usec = static_cast<time_t>((timeout - static_cast<double>(sec)) * 1e6);
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);
    const auto res = client.Post(path, body, "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout || err == httplib::Error::Write)
        fail(ErrorCode::ProviderTimeout, "provider did not answer within " + io::format_number(timeout) + " s");
      fail(ErrorCode::IoFault, "provider request failed: " + httplib::to_string(err));
    }
    require(res->status == 200, ErrorCode::IoFault, "provider returned HTTP " + std::to_string(res->status));
    return res->body;
  }
};

/// Fixture directory reader.
class FixtureStore {
 public:
  explicit FixtureStore(std::filesystem::path root) : root_(std::move(root)) {}

  static std::string key(const json& request) { return to_hex(fnv1a(request.dump())); }

  std::filesystem::path json_path(const std::string& kind, const json& request) const {
    return root_ / kind / (key(request) + ".json");
  }

  std::filesystem::path blob_path(const json& request) const { return root_ / (key(request) + ".bin"); }

  json load_json(const std::string& kind, const json& request) const {
    const auto path = json_path(kind, request);
    miss_unless(path, request);
    try {
      return json::parse(io::read_file(path));
    } catch (const json::exception& e) {
      fail(ErrorCode::GuidanceSchemaFault, "fixture " + path.string() + " is not valid JSON");
    }
  }

  std::string load_blob(const json& request) const {
    const auto path = blob_path(request);
    miss_unless(path, request);
    return io::read_file(path);
  }

  const std::filesystem::path& root() const { return root_; }

 private:
  static void miss_unless(const std::filesystem::path& path, const json& request) {
    require(std::filesystem::exists(path), ErrorCode::FixtureMiss,
            "no fixture " + path.string() + " for request " + request.dump());
  }

  std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// Segmentation fallback: seeded k-means with farthest-point initialisation.

inline void check_part_count(int s) {
  require(s >= 3 && s <= 8, ErrorCode::BadPartCount, "part count must lie in [3,8], got " + std::to_string(s));
}

/// Labels in [0, S), numbered by first appearance in point order.
inline std::vector<int> kmeans_labels(std::span<const std::array<double, 3>> points, int s, std::uint64_t seed) {
  check_part_count(s);
  require(!points.empty(), ErrorCode::Precondition, "segmentation needs points");
  const auto d2 = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]);
  };
  std::mt19937_64 rng(seed);
  std::vector<std::array<double, 3>> centers{points[rng() % points.size()]};
  while (centers.size() < static_cast<std::size_t>(s)) {
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) m = std::min(m, d2(points[i], c));
      if (m > far_d) far = i, far_d = m;
    }
    centers.push_back(points[far]);
  }

  std::vector<int> label(points.size(), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool moved = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      int best = 0;
      for (int c = 1; c < s; ++c)
        if (d2(points[i], centers[c]) < d2(points[i], centers[best])) best = c;
      moved = moved || label[i] != best;
      label[i] = best;
    }
    if (!moved) break;
    std::vector<std::array<double, 3>> sum(static_cast<std::size_t>(s), {0, 0, 0});
    std::vector<std::size_t> count(static_cast<std::size_t>(s), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (int a = 0; a < 3; ++a) sum[label[i]][a] += points[i][a];
      ++count[label[i]];
    }
    for (int c = 0; c < s; ++c)
      if (count[c] > 0)
        for (int a = 0; a < 3; ++a) centers[c][a] = sum[c][a] / static_cast<double>(count[c]);
  }

  std::map<int, int> renumber;
  for (auto& l : label) {
    const auto it = renumber.try_emplace(l, static_cast<int>(renumber.size())).first;
    l = it->second;
  }
  return label;
}

/// Number of distinct labels and whether every one covers >= 2 points.
inline bool non_degenerate(const std::vector<int>& labels, int s) {
  std::map<int, std::size_t> count;
  for (int l : labels) ++count[l];
  if (static_cast<int>(count.size()) != s) return false;
  return std::all_of(count.begin(), count.end(), [](const auto& kv) { return kv.second >= 2; });
}

/// Largest S whose labeling is non-degenerate; the smallest S if none is.
inline int fallback_granularity(const std::map<int, std::vector<int>>& labelings) {
  require(!labelings.empty(), ErrorCode::Precondition, "no labelings to choose from");
  for (auto it = labelings.rbegin(); it != labelings.rend(); ++it)
    if (non_degenerate(it->second, it->first)) return it->first;
  return labelings.begin()->first;
}

struct PartSelection {
  int granularity = 3;
  std::set<int> part_ids;
};

struct ImageGuidance {
  std::string payload;
  Condition condition;
};

inline std::string points_digest(std::span<const std::array<double, 3>> points) {
  std::string buf;
  for (const auto& p : points)
    for (double x : p) buf += io::format_number(x) + " ";
  return to_hex(fnv1a(buf));
}

inline std::string labels_digest(const std::vector<int>& labels) {
  std::string buf;
  for (int l : labels) buf += std::to_string(l) + " ";
  return to_hex(fnv1a(buf));
}

// ---------------------------------------------------------------------------

class GuidanceClient {
 public:
  explicit GuidanceClient(ProviderConfig config, std::shared_ptr<Transport> transport = nullptr)
      : config_(std::move(config)), transport_(std::move(transport)), fixtures_(config_.fixture_dir) {
    config_.validate();
    if (!transport_) transport_ = std::make_shared<HttpTransport>();
  }

  const ProviderConfig& config() const { return config_; }

  /// Canonical request bodies; the fixture key is the hash of their dump.
  static json guidance_request(const ViewSet& views, const std::string& prompt) {
    return {{"kind", "guidance"}, {"prompt", prompt}, {"view_ids", views.ids()}};
  }

  static json view_request(const ViewSet& views, const GuidanceBundle& bundle) {
    return {{"kind", "view"},
            {"view_ids", views.ids()},
            {"original_description", bundle.original_description},
            {"target_part_names", bundle.target_part_names},
            {"edit_type", to_string(bundle.edit_type)}};
  }

  static json image_request(const std::string& payload, const std::string& prompt, const std::string& part_desc) {
    return {{"kind", "image"}, {"prompt", prompt}, {"part_description", part_desc},
            {"payload", to_hex(fnv1a(payload))}};
  }

  static json parts_request(std::span<const std::array<double, 3>> points, int s) {
    return {{"kind", "parts"}, {"part_count", s}, {"points", points_digest(points)}};
  }

  static json selection_request(const GuidanceBundle& bundle, const std::map<int, std::vector<int>>& labelings) {
    json grans = json::object();
    for (const auto& [s, labels] : labelings) grans[std::to_string(s)] = labels_digest(labels);
    return {{"kind", "selection"},
            {"target_part_names", bundle.target_part_names},
            {"new_complete_description", bundle.new_complete_description},
            {"labelings", grans}};
  }

  GuidanceBundle request_text_guidance(const ViewSet& views, const std::string& prompt) const {
    require(!prompt.empty(), ErrorCode::Precondition, "prompt is empty");
    views.validate();
    return bundle_from_json(exchange("guidance", guidance_request(views, prompt), &views));
  }

  /// Provider choice, or the visibility heuristic when offline.
  int select_best_view(const ViewSet& views, const GuidanceBundle& bundle, const VoxelMask* occupancy = nullptr,
                       const CoordSet* targets = nullptr) const {
    views.validate();
    if (views.views.size() == 1) return views.views.front().id;
    if (config_.mode == ProviderConfig::Mode::Offline) {
      require(occupancy && targets, ErrorCode::Precondition, "view heuristic needs occupancy and target voxels");
      return heuristic_best_view(views, *occupancy, *targets);
    }
    const json r = exchange("view", view_request(views, bundle), &views);
    require(r.is_object() && r.contains("view_id") && r.at("view_id").is_number_integer(),
            ErrorCode::GuidanceSchemaFault, "view response needs an integer view_id");
    const int id = r.at("view_id").get<int>();
    const auto ids = views.ids();
    require(std::find(ids.begin(), ids.end(), id) != ids.end(), ErrorCode::GuidanceSchemaFault,
            "view response names unknown view " + std::to_string(id));
    return id;
  }

  ImageGuidance request_image_edit(const std::string& payload, const std::string& prompt,
                                   const std::string& part_desc) const {
    require(!payload.empty(), ErrorCode::Precondition, "view payload is empty");
    const json req = image_request(payload, prompt, part_desc);
    std::string edited;
    if (config_.mode == ProviderConfig::Mode::Fixture) {
      edited = fixtures_.load_blob(req);
    } else {
      json body = req;
      body["image_b64"] = base64_encode(payload);
      const json r = exchange("image", body, nullptr);
      require(r.is_object() && r.contains("image_b64") && r.at("image_b64").is_string(),
              ErrorCode::GuidanceSchemaFault, "image response needs image_b64");
      edited = base64_decode(r.at("image_b64").get<std::string>());
    }
    require(!edited.empty(), ErrorCode::GuidanceSchemaFault, "image response is empty");
    return {edited, image_condition(edited)};
  }

  /// Provider labels, or seeded k-means when offline.
  std::vector<int> request_segmentation(std::span<const std::array<double, 3>> points, int s,
                                        std::uint64_t seed) const {
    check_part_count(s);
    require(!points.empty(), ErrorCode::Precondition, "segmentation needs points");
    if (config_.mode == ProviderConfig::Mode::Offline) return kmeans_labels(points, s, seed);
    const json r = exchange("parts", parts_request(points, s), nullptr);
    require(r.is_object() && r.contains("labels") && r.at("labels").is_array(), ErrorCode::GuidanceSchemaFault,
            "parts response needs a labels list");
    std::vector<int> labels;
    for (const auto& l : r.at("labels")) {
      require(l.is_number_integer() && l.get<int>() >= 0 && l.get<int>() < s, ErrorCode::GuidanceSchemaFault,
              "part label out of range");
      labels.push_back(l.get<int>());
    }
    require(labels.size() == points.size(), ErrorCode::GuidanceSchemaFault, "parts response has wrong length");
    return labels;
  }

  std::map<int, std::vector<int>> multi_granularity_segment(std::span<const std::array<double, 3>> points,
                                                            std::uint64_t seed) const {
    require(!points.empty(), ErrorCode::Precondition, "segmentation needs points");
    std::map<int, std::vector<int>> out;
    for (int s = 3; s <= 8; ++s) out[s] = request_segmentation(points, s, seed);
    return out;
  }

  PartSelection request_part_selection(const GuidanceBundle& bundle,
                                       const std::map<int, std::vector<int>>& labelings) const {
    require(config_.mode != ProviderConfig::Mode::Offline, ErrorCode::Precondition,
            "part selection needs a provider; set the edit parts explicitly");
    const json r = exchange("selection", selection_request(bundle, labelings), nullptr);
    require(r.is_object() && r.contains("granularity") && r.at("granularity").is_number_integer() &&
                r.contains("part_ids") && r.at("part_ids").is_array(),
            ErrorCode::GuidanceSchemaFault, "selection response needs granularity and part_ids");
    PartSelection sel;
    sel.granularity = r.at("granularity").get<int>();
    require(labelings.count(sel.granularity) > 0, ErrorCode::GuidanceSchemaFault,
            "selection names an unknown granularity");
    for (const auto& id : r.at("part_ids")) {
      require(id.is_number_integer(), ErrorCode::GuidanceSchemaFault, "part id is not an integer");
      sel.part_ids.insert(id.get<int>());
    }
    require(!sel.part_ids.empty(), ErrorCode::GuidanceSchemaFault, "selection has no parts");
    return sel;
  }

 private:
  json exchange(const std::string& kind, const json& request, const ViewSet* views) const {
    switch (config_.mode) {
      case ProviderConfig::Mode::Offline:
        fail(ErrorCode::Precondition, kind + " request needs a provider");
      case ProviderConfig::Mode::Fixture:
        return fixtures_.load_json(kind, request);
      case ProviderConfig::Mode::Live:
        break;
    }
    json body{{"kind", kind}, {"prompt", request.value("prompt", "")}, {"views", json::array()}, {"extras", request}};
    if (views)
      for (const auto& v : views->views)
        body["views"].push_back(
            {{"id", v.id}, {"azimuth", v.azimuth}, {"elevation", v.elevation}, {"image_b64", base64_encode(v.payload)}});
    for (int attempt = 0;; ++attempt) {
      try {
        const std::string reply = transport_->post(config_.endpoint, body.dump(), config_.timeout);
        try {
          return json::parse(reply);
        } catch (const json::exception&) {
          fail(ErrorCode::GuidanceSchemaFault, kind + " response is not valid JSON");
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ProviderTimeout || attempt >= config_.retries) throw;
      }
    }
  }

  ProviderConfig config_;
  std::shared_ptr<Transport> transport_;
  FixtureStore fixtures_;
};

}  // namespace voxedit
