#include "p2sc/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "p2sc/common.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace p2sc {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_text_extension(const std::string& path) {
    const std::string ext = fs::path(path).extension().string();
    return ext == ".xyz" || ext == ".txt";
}

double parse_double(std::string_view tok, const std::string& path, size_t line_no) {
    double v = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    P2SC_CHECK_AS(ec == std::errc() && ptr == last, DataError,
                  path << ":" << line_no << ": bad number '" << tok << "'");
    P2SC_CHECK_AS(std::isfinite(v), DataError,
                  path << ":" << line_no << ": non-finite value '" << tok << "'");
    return v;
}

PointCloud load_cloud_text(const std::string& path) {
    std::ifstream in(path);
    P2SC_CHECK_AS(in, DataError, "cannot open " << path);

    PointCloud cloud;
    std::string line;
    size_t line_no = 0;
    int arity = 0;  // 3 or 6, fixed by the first data line
    while (std::getline(in, line)) {
        ++line_no;
        if (const size_t hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::vector<std::string_view> toks;
        std::string_view rest(line);
        while (true) {
            const size_t start = rest.find_first_not_of(" \t\r");
            if (start == std::string_view::npos) break;
            rest.remove_prefix(start);
            const size_t end = rest.find_first_of(" \t\r");
            toks.push_back(rest.substr(0, end));
            if (end == std::string_view::npos) break;
            rest.remove_prefix(end);
        }
        if (toks.empty()) continue;
        P2SC_CHECK_AS(toks.size() == 3 || toks.size() == 6, DataError,
                      path << ":" << line_no << ": expected 3 or 6 columns, got " << toks.size());
        if (arity == 0) {
            arity = static_cast<int>(toks.size());
            if (arity == 6) cloud.normals.emplace();
        }
        P2SC_CHECK_AS(static_cast<int>(toks.size()) == arity, DataError,
                      path << ":" << line_no << ": inconsistent column count");
        Point3 p{parse_double(toks[0], path, line_no), parse_double(toks[1], path, line_no),
                 parse_double(toks[2], path, line_no)};
        cloud.coords.push_back(p);
        if (arity == 6) {
            cloud.normals->push_back(Point3{parse_double(toks[3], path, line_no),
                                            parse_double(toks[4], path, line_no),
                                            parse_double(toks[5], path, line_no)});
        }
    }
    P2SC_CHECK_AS(!cloud.coords.empty(), DataError, path << ": no points found");
    cloud.validate();
    return cloud;
}

template <typename T>
void write_raw(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& path, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    P2SC_CHECK_AS(static_cast<bool>(in), DataError, path << ": truncated file reading " << what);
    return v;
}

PointCloud load_cloud_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    P2SC_CHECK_AS(in, DataError, "cannot open " << path);

    char magic[4];
    in.read(magic, 4);
    P2SC_CHECK_AS(in && std::memcmp(magic, "P2PC", 4) == 0, DataError,
                  path << ": unknown magic, not a P2PC file");
    const uint32_t version = read_raw<uint32_t>(in, path, "version");
    P2SC_CHECK_AS(version == 1, DataError, path << ": unsupported version " << version);
    const uint32_t n = read_raw<uint32_t>(in, path, "point count");
    P2SC_CHECK_AS(n > 0, DataError, path << ": zero points");
    const uint8_t flags = read_raw<uint8_t>(in, path, "flags");
    P2SC_CHECK_AS((flags & ~0x03u) == 0, DataError,
                  path << ": unknown flag bits " << static_cast<int>(flags));

    PointCloud cloud;
    cloud.coords.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            cloud.coords[i][static_cast<size_t>(c)] =
                static_cast<double>(read_raw<float>(in, path, "coordinates"));
        }
    }
    if (flags & 0x01u) {
        cloud.normals.emplace(n);
        for (uint32_t i = 0; i < n; ++i) {
            for (int c = 0; c < 3; ++c) {
                (*cloud.normals)[i][static_cast<size_t>(c)] =
                    static_cast<double>(read_raw<float>(in, path, "normals"));
            }
        }
    }
    if (flags & 0x02u) {
        cloud.part_labels.emplace(n);
        for (uint32_t i = 0; i < n; ++i) {
            (*cloud.part_labels)[i] = static_cast<int>(read_raw<uint16_t>(in, path, "part labels"));
        }
    }
    cloud.validate();
    return cloud;
}

// Area-weighted pick among face weights; returns face index.
size_t pick_weighted(RngStream& rng, const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    const double u = rng.uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return i;
    }
    return weights.size() - 1;
}

struct SurfaceSample {
    Point3 p;
    Point3 n;
};

SurfaceSample sample_box_surface(RngStream& rng, double hx, double hy, double hz) {
    const std::vector<double> face_w = {hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy};
    const size_t face = pick_weighted(rng, face_w);
    const double a = rng.uniform(-1.0, 1.0);
    const double b = rng.uniform(-1.0, 1.0);
    switch (face) {
        case 0: return {{+hx, a * hy, b * hz}, {+1, 0, 0}};
        case 1: return {{-hx, a * hy, b * hz}, {-1, 0, 0}};
        case 2: return {{a * hx, +hy, b * hz}, {0, +1, 0}};
        case 3: return {{a * hx, -hy, b * hz}, {0, -1, 0}};
        case 4: return {{a * hx, b * hy, +hz}, {0, 0, +1}};
        default: return {{a * hx, b * hy, -hz}, {0, 0, -1}};
    }
}

bool strictly_inside_box(const Point3& p, double hx, double hy, double hz) {
    return std::abs(p[0]) < hx && std::abs(p[1]) < hy && std::abs(p[2]) < hz;
}

SurfaceSample sample_family(ShapeFamily family, RngStream& rng) {
    switch (family) {
        case ShapeFamily::sphere: {
            while (true) {
                const Point3 g{rng.gaussian(), rng.gaussian(), rng.gaussian()};
                const double len = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
                if (len < 1e-12) continue;
                const Point3 u{g[0] / len, g[1] / len, g[2] / len};
                return {u, u};
            }
        }
        case ShapeFamily::cube:
            return sample_box_surface(rng, 1.0, 1.0, 1.0);
        case ShapeFamily::torus: {
            // Major radius 0.75, minor 0.25; rejection keeps area uniform.
            const double R = 0.75, r = 0.25;
            while (true) {
                const double u = rng.uniform(0.0, 2.0 * kPi);
                const double v = rng.uniform(0.0, 2.0 * kPi);
                if (rng.uniform() * (R + r) > R + r * std::cos(v)) continue;
                const double ring = R + r * std::cos(v);
                return {{ring * std::cos(u), ring * std::sin(u), r * std::sin(v)},
                        {std::cos(v) * std::cos(u), std::cos(v) * std::sin(u), std::sin(v)}};
            }
        }
        case ShapeFamily::cylinder: {
            const double r = 0.5, h = 1.0;  // z in [-h, h]
            const double side = 2.0 * kPi * r * 2.0 * h;
            const double cap = kPi * r * r;
            const size_t region = pick_weighted(rng, {side, cap, cap});
            if (region == 0) {
                const double t = rng.uniform(0.0, 2.0 * kPi);
                const double z = rng.uniform(-h, h);
                return {{r * std::cos(t), r * std::sin(t), z}, {std::cos(t), std::sin(t), 0.0}};
            }
            const double rho = r * std::sqrt(rng.uniform());
            const double t = rng.uniform(0.0, 2.0 * kPi);
            const double z = region == 1 ? h : -h;
            return {{rho * std::cos(t), rho * std::sin(t), z}, {0.0, 0.0, region == 1 ? 1.0 : -1.0}};
        }
        case ShapeFamily::cone: {
            // Apex (0,0,1), base circle radius 1 at z = -1, closed by a disk.
            const double rb = 1.0, height = 2.0;
            const double slant = std::sqrt(height * height + rb * rb);
            const size_t region = pick_weighted(rng, {kPi * rb * slant, kPi * rb * rb});
            const double t = rng.uniform(0.0, 2.0 * kPi);
            if (region == 0) {
                const double f = std::sqrt(rng.uniform());  // area grows with distance from apex
                const double rho = f * rb;
                const double inv = 1.0 / std::sqrt(1.0 + 0.25);
                return {{rho * std::cos(t), rho * std::sin(t), 1.0 - f * height},
                        {std::cos(t) * inv, std::sin(t) * inv, 0.5 * inv}};
            }
            const double rho = rb * std::sqrt(rng.uniform());
            return {{rho * std::cos(t), rho * std::sin(t), -1.0}, {0.0, 0.0, -1.0}};
        }
        case ShapeFamily::plane: {
            return {{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0}, {0.0, 0.0, 1.0}};
        }
        case ShapeFamily::helix: {
            // Wire of two turns; the normal is the outward radial direction.
            const double t = rng.uniform(0.0, 4.0 * kPi);
            return {{std::cos(t), std::sin(t), t / (2.0 * kPi) - 1.0},
                    {std::cos(t), std::sin(t), 0.0}};
        }
        case ShapeFamily::cross: {
            // Union of two orthogonal slabs; interior faces are rejected.
            const double hb = 0.25;
            while (true) {
                const bool first = rng.uniform() < 0.5;
                SurfaceSample s = first ? sample_box_surface(rng, 1.0, hb, hb)
                                        : sample_box_surface(rng, hb, 1.0, hb);
                const bool inside_other = first ? strictly_inside_box(s.p, hb, 1.0, hb)
                                                : strictly_inside_box(s.p, 1.0, hb, hb);
                if (!inside_other) return s;
            }
        }
    }
    throw ConfigError("unknown shape family");
}

void require_key_set(const json& obj, const std::vector<std::string>& keys,
                     const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        P2SC_CHECK_AS(std::find(keys.begin(), keys.end(), it.key()) != keys.end(), DataError,
                      where << ": unknown key '" << it.key() << "'");
    }
}

std::vector<int> load_parts_file(const std::string& path) {
    std::ifstream in(path);
    P2SC_CHECK_AS(in, DataError, "cannot open part labels " << path);
    std::vector<int> labels;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const size_t hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string tok;
        while (ss >> tok) {
            int v = 0;
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            P2SC_CHECK_AS(ec == std::errc() && ptr == tok.data() + tok.size() && v >= 0, DataError,
                          path << ":" << line_no << ": bad part label '" << tok << "'");
            labels.push_back(v);
        }
    }
    P2SC_CHECK_AS(!labels.empty(), DataError, path << ": no part labels found");
    return labels;
}

}  // namespace

const char* family_name(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::sphere: return "sphere";
        case ShapeFamily::cube: return "cube";
        case ShapeFamily::torus: return "torus";
        case ShapeFamily::cylinder: return "cylinder";
        case ShapeFamily::cone: return "cone";
        case ShapeFamily::plane: return "plane";
        case ShapeFamily::helix: return "helix";
        case ShapeFamily::cross: return "cross";
    }
    return "?";
}

ShapeFamily family_from_name(const std::string& name) {
    for (int i = 0; i < kNumFamilies; ++i) {
        const auto f = static_cast<ShapeFamily>(i);
        if (name == family_name(f)) return f;
    }
    throw ConfigError("unknown shape family '" + name + "'");
}

void SyntheticSpec::validate() const {
    P2SC_CHECK_AS(points_per_cloud >= 8, ConfigError,
                  "points_per_cloud must be >= 8, got " << points_per_cloud);
    P2SC_CHECK_AS(jitter_sigma >= 0.0, ConfigError, "jitter_sigma must be >= 0");
}

PointCloud load_cloud(const std::string& path) {
    return is_text_extension(path) ? load_cloud_text(path) : load_cloud_binary(path);
}

void save_cloud_xyz(const std::string& path, const PointCloud& cloud) {
    std::ofstream out(path);
    P2SC_CHECK_AS(out, DataError, "cannot write " << path);
    char buf[256];
    for (size_t i = 0; i < cloud.coords.size(); ++i) {
        const Point3& p = cloud.coords[i];
        if (cloud.normals) {
            const Point3& n = (*cloud.normals)[i];
            std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g\n", p[0], p[1], p[2],
                          n[0], n[1], n[2]);
        } else {
            std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
        }
        out << buf;
    }
    P2SC_CHECK_AS(static_cast<bool>(out), DataError, "write failed for " << path);
}

void save_cloud_binary(const std::string& path, const PointCloud& cloud) {
    cloud.validate();
    std::ofstream out(path, std::ios::binary);
    P2SC_CHECK_AS(out, DataError, "cannot write " << path);
    out.write("P2PC", 4);
    write_raw<uint32_t>(out, 1);
    write_raw<uint32_t>(out, static_cast<uint32_t>(cloud.size()));
    uint8_t flags = 0;
    if (cloud.normals) flags |= 0x01u;
    if (cloud.part_labels) flags |= 0x02u;
    write_raw<uint8_t>(out, flags);
    for (const Point3& p : cloud.coords) {
        for (double c : p) write_raw<float>(out, static_cast<float>(c));
    }
    if (cloud.normals) {
        for (const Point3& n : *cloud.normals) {
            for (double c : n) write_raw<float>(out, static_cast<float>(c));
        }
    }
    if (cloud.part_labels) {
        for (int l : *cloud.part_labels) {
            P2SC_CHECK_AS(l >= 0 && l <= 0xFFFF, DataError, "part label " << l << " out of u16");
            write_raw<uint16_t>(out, static_cast<uint16_t>(l));
        }
    }
    P2SC_CHECK_AS(static_cast<bool>(out), DataError, "write failed for " << path);
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
    P2SC_CHECK_AS(cloud.size() >= 1, DataError, "normalize_unit_sphere: empty cloud");
    const auto n = static_cast<double>(cloud.size());
    Point3 mean{0, 0, 0};
    for (const Point3& p : cloud.coords) {
        mean[0] += p[0];
        mean[1] += p[1];
        mean[2] += p[2];
    }
    mean[0] /= n;
    mean[1] /= n;
    mean[2] /= n;

    PointCloud out = cloud;
    double max_norm = 0.0;
    for (Point3& p : out.coords) {
        p[0] -= mean[0];
        p[1] -= mean[1];
        p[2] -= mean[2];
        max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    }
    if (max_norm > 1e-300) {
        for (Point3& p : out.coords) {
            p[0] /= max_norm;
            p[1] /= max_norm;
            p[2] /= max_norm;
        }
    }
    return out;
}

std::vector<PointCloud> generate_synthetic(const SyntheticSpec& spec, int64_t count) {
    spec.validate();
    P2SC_CHECK_AS(count >= 0, ConfigError, "negative cloud count");
    RngStream rng(mix_seed(spec.seed, static_cast<uint64_t>(spec.shape_family) + 0x53594e54ull));

    std::vector<PointCloud> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t c = 0; c < count; ++c) {
        PointCloud cloud;
        cloud.coords.resize(static_cast<size_t>(spec.points_per_cloud));
        cloud.normals.emplace(static_cast<size_t>(spec.points_per_cloud));
        cloud.part_labels.emplace(static_cast<size_t>(spec.points_per_cloud));
        for (int64_t i = 0; i < spec.points_per_cloud; ++i) {
            const SurfaceSample s = sample_family(spec.shape_family, rng);
            Point3 p = s.p;
            (*cloud.part_labels)[static_cast<size_t>(i)] = p[0] >= 0.0 ? 1 : 0;
            if (spec.jitter_sigma > 0.0) {
                p[0] += spec.jitter_sigma * rng.gaussian();
                p[1] += spec.jitter_sigma * rng.gaussian();
                p[2] += spec.jitter_sigma * rng.gaussian();
            }
            cloud.coords[static_cast<size_t>(i)] = p;
            (*cloud.normals)[static_cast<size_t>(i)] = s.n;
        }
        out.push_back(std::move(cloud));
    }
    return out;
}

PointCloud resample_to(const PointCloud& cloud, int64_t n, RngStream& rng) {
    P2SC_CHECK(n >= 1, "resample_to: n must be positive");
    const int64_t have = cloud.size();
    std::vector<int64_t> keep;
    if (have > n) {
        keep = farthest_point_sample(cloud, n);
    } else {
        keep.resize(static_cast<size_t>(have));
        std::iota(keep.begin(), keep.end(), int64_t{0});
        while (static_cast<int64_t>(keep.size()) < n) {
            keep.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(have))));
        }
    }
    PointCloud out;
    out.coords.reserve(keep.size());
    if (cloud.normals) out.normals.emplace();
    if (cloud.part_labels) out.part_labels.emplace();
    for (int64_t idx : keep) {
        out.coords.push_back(cloud.coords[static_cast<size_t>(idx)]);
        if (cloud.normals) out.normals->push_back((*cloud.normals)[static_cast<size_t>(idx)]);
        if (cloud.part_labels)
            out.part_labels->push_back((*cloud.part_labels)[static_cast<size_t>(idx)]);
    }
    return out;
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    P2SC_CHECK_AS(in, DataError, "cannot open manifest " << path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("manifest " + path + ": " + e.what());
    }
    P2SC_CHECK_AS(doc.is_object(), DataError, path << ": manifest must be a JSON object");
    require_key_set(doc, {"classes", "entries"}, path);
    P2SC_CHECK_AS(doc.contains("classes") && doc["classes"].is_array(), DataError,
                  path << ": missing 'classes' array");
    P2SC_CHECK_AS(doc.contains("entries") && doc["entries"].is_array(), DataError,
                  path << ": missing 'entries' array");

    DatasetManifest m;
    for (const json& c : doc["classes"]) {
        P2SC_CHECK_AS(c.is_string(), DataError, path << ": class names must be strings");
        m.class_names.push_back(c.get<std::string>());
    }
    P2SC_CHECK_AS(!m.class_names.empty(), DataError, path << ": no classes");

    const fs::path base = fs::path(path).parent_path();
    for (const json& e : doc["entries"]) {
        P2SC_CHECK_AS(e.is_object(), DataError, path << ": entries must be objects");
        require_key_set(e, {"path", "label", "parts"}, path);
        P2SC_CHECK_AS(e.contains("path") && e["path"].is_string(), DataError,
                      path << ": entry missing 'path'");
        P2SC_CHECK_AS(e.contains("label") && e["label"].is_number_integer(), DataError,
                      path << ": entry missing integer 'label'");
        ManifestEntry entry;
        entry.label = e["label"].get<int>();
        P2SC_CHECK_AS(entry.label >= 0 && entry.label < static_cast<int>(m.class_names.size()),
                      DataError, path << ": label " << entry.label << " outside [0, "
                                      << m.class_names.size() << ")");
        const fs::path rel = e["path"].get<std::string>();
        entry.path = rel.is_absolute() ? rel.string() : (base / rel).string();
        if (e.contains("parts")) {
            P2SC_CHECK_AS(e["parts"].is_string(), DataError, path << ": 'parts' must be a string");
            const fs::path prel = e["parts"].get<std::string>();
            entry.parts_path = prel.is_absolute() ? prel.string() : (base / prel).string();
        }
        m.entries.push_back(std::move(entry));
    }
    P2SC_CHECK_AS(!m.entries.empty(), DataError, path << ": no entries");
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
    json doc;
    doc["classes"] = manifest.class_names;
    doc["entries"] = json::array();
    for (const ManifestEntry& e : manifest.entries) {
        json je{{"path", e.path}, {"label", e.label}};
        if (!e.parts_path.empty()) je["parts"] = e.parts_path;
        doc["entries"].push_back(std::move(je));
    }
    std::ofstream out(path);
    P2SC_CHECK_AS(out, DataError, "cannot write manifest " << path);
    out << doc.dump(2) << "\n";
    P2SC_CHECK_AS(static_cast<bool>(out), DataError, "write failed for " << path);
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest,
                                                           double train_fraction, uint64_t seed) {
    P2SC_CHECK_AS(train_fraction > 0.0 && train_fraction < 1.0, ConfigError,
                  "train_fraction must be in (0, 1), got " << train_fraction);
    const int num_classes = static_cast<int>(manifest.class_names.size());
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(num_classes));
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        const int label = manifest.entries[i].label;
        P2SC_CHECK_AS(label >= 0 && label < num_classes, DataError,
                      "entry " << i << " has label " << label << " outside class list");
        by_class[static_cast<size_t>(label)].push_back(i);
    }

    DatasetManifest train{manifest.class_names, {}};
    DatasetManifest test{manifest.class_names, {}};
    for (int label = 0; label < num_classes; ++label) {
        std::vector<size_t>& items = by_class[static_cast<size_t>(label)];
        P2SC_CHECK_AS(items.size() >= 2, DataError,
                      "class '" << manifest.class_names[static_cast<size_t>(label)] << "' has "
                                << items.size() << " items; need >= 2 to split");
        RngStream rng(mix_seed(seed, static_cast<uint64_t>(label)));
        rng.shuffle(items);
        const auto n = static_cast<int64_t>(items.size());
        int64_t n_train = std::llround(train_fraction * static_cast<double>(n));
        n_train = std::clamp<int64_t>(n_train, 1, n - 1);
        for (int64_t i = 0; i < n; ++i) {
            (i < n_train ? train : test).entries.push_back(manifest.entries[items[static_cast<size_t>(i)]]);
        }
    }
    return {std::move(train), std::move(test)};
}

std::vector<LabeledCloud> load_dataset(const DatasetManifest& manifest) {
    std::vector<LabeledCloud> out;
    out.reserve(manifest.entries.size());
    for (const ManifestEntry& e : manifest.entries) {
        LabeledCloud lc;
        lc.cloud = load_cloud(e.path);
        lc.label = e.label;
        if (!e.parts_path.empty()) {
            std::vector<int> parts = load_parts_file(e.parts_path);
            P2SC_CHECK_AS(static_cast<int64_t>(parts.size()) == lc.cloud.size(), DataError,
                          e.parts_path << ": " << parts.size() << " labels for "
                                       << lc.cloud.size() << " points");
            lc.cloud.part_labels = std::move(parts);
        }
        out.push_back(std::move(lc));
    }
    return out;
}

std::vector<LabeledCloud> make_synth_dataset(const std::vector<ShapeFamily>& families,
                                             int64_t per_class, int64_t points_per_cloud,
                                             double jitter_sigma, uint64_t seed) {
    std::vector<LabeledCloud> out;
    out.reserve(static_cast<size_t>(per_class) * families.size());
    for (size_t fi = 0; fi < families.size(); ++fi) {
        SyntheticSpec spec;
        spec.shape_family = families[fi];
        spec.points_per_cloud = points_per_cloud;
        spec.jitter_sigma = jitter_sigma;
        spec.seed = seed;
        std::vector<PointCloud> clouds = generate_synthetic(spec, per_class);
        for (PointCloud& c : clouds) {
            out.push_back(LabeledCloud{std::move(c), static_cast<int>(fi)});
        }
    }
    return out;
}

}  // namespace p2sc
