#include "matfield/io.hpp"

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace matfield::io {

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

class ByteWriter {
public:
    void u16(std::uint16_t v) { raw(&v, 2); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void f32(float v) { raw(&v, 4); }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void bytes(const void* p, std::size_t n) { raw(p, n); }
    const std::string& data() const { return buf_; }

private:
    void raw(const void* p, std::size_t n) {
        // Host is little-endian; memcpy keeps the layout explicit.
        buf_.append(reinterpret_cast<const char*>(p), n);
    }
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& buf) : buf_(buf) {}
    std::uint16_t u16() { return get<std::uint16_t>(); }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    float f32() { return get<float>(); }
    std::uint8_t u8() { return get<std::uint8_t>(); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string out = buf_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw std::runtime_error("truncated binary file");
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("cannot parse number '" + s + "' in " + what);
    }
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

SegmentedMesh parse_obj(const std::string& text) {
    SegmentedMesh mesh;
    SegmentedMesh::Segment* current = nullptr;
    auto segment_named = [&](const std::string& name) -> SegmentedMesh::Segment* {
        for (auto& seg : mesh.segments)
            if (seg.id == name) return &seg;
        mesh.segments.push_back({name, {}});
        return &mesh.segments.back();
    };

    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z))
                throw std::runtime_error("obj line " + std::to_string(lineno) +
                                         ": malformed vertex");
            mesh.vertices.emplace_back(x, y, z);
        } else if (tag == "g") {
            std::string name;
            ls >> name;
            if (name.empty()) name = "default";
            current = segment_named(name);
        } else if (tag == "f") {
            std::vector<int> face;
            std::string tok;
            while (ls >> tok) {
                const auto slash = tok.find('/');
                const std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
                int idx = 0;
                try {
                    idx = std::stoi(head);
                } catch (const std::exception&) {
                    throw std::runtime_error("obj line " + std::to_string(lineno) +
                                             ": malformed face index '" + tok + "'");
                }
                if (idx < 0)
                    idx = static_cast<int>(mesh.vertices.size()) + idx;  // relative
                else
                    idx -= 1;  // 1-based
                face.push_back(idx);
            }
            if (face.size() < 3)
                throw std::runtime_error("obj line " + std::to_string(lineno) +
                                         ": face needs at least 3 vertices");
            if (!current) current = segment_named("default");
            current->faces.push_back(std::move(face));
        }
        // Other tags (vn, vt, usemtl, o, s, mtllib) are ignored.
    }
    validate_mesh(mesh);
    return mesh;
}

SegmentedMesh read_obj(const std::string& path) { return parse_obj(slurp(path)); }

std::vector<GaussianSplat> parse_splats_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("splat csv: empty file");
    if (trim(line) != "mx,my,mz,qw,qx,qy,qz,sx,sy,sz,opacity")
        throw std::runtime_error("splat csv: unexpected header '" + trim(line) + "'");
    std::vector<GaussianSplat> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cols = split(line, ',');
        if (cols.size() != 11)
            throw std::runtime_error("splat csv line " + std::to_string(lineno) +
                                     ": expected 11 columns");
        const std::string ctx = "splat csv line " + std::to_string(lineno);
        GaussianSplat s;
        s.mean = Eigen::Vector3d(parse_double(cols[0], ctx), parse_double(cols[1], ctx),
                                 parse_double(cols[2], ctx));
        s.quat = Eigen::Vector4d(parse_double(cols[3], ctx), parse_double(cols[4], ctx),
                                 parse_double(cols[5], ctx), parse_double(cols[6], ctx));
        s.scales = Eigen::Vector3d(parse_double(cols[7], ctx), parse_double(cols[8], ctx),
                                   parse_double(cols[9], ctx));
        s.opacity = parse_double(cols[10], ctx);
        validate_splat(s);
        out.push_back(s);
    }
    return out;
}

std::vector<GaussianSplat> read_splats_csv(const std::string& path) {
    return parse_splats_csv(slurp(path));
}

std::vector<MaterialTriplet> read_triplets_csv(const std::string& path) {
    std::istringstream in(slurp(path));
    std::string line;
    if (!std::getline(in, line) || trim(line) != "e_pa,nu,rho_kgm3")
        throw std::runtime_error("triplet csv '" + path + "': missing e_pa,nu,rho_kgm3 header");
    std::vector<MaterialTriplet> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cols = split(line, ',');
        if (cols.size() != 3)
            throw std::runtime_error("triplet csv line " + std::to_string(lineno) +
                                     ": expected 3 columns");
        const std::string ctx = "triplet csv line " + std::to_string(lineno);
        MaterialTriplet t{parse_double(cols[0], ctx), parse_double(cols[1], ctx),
                          parse_double(cols[2], ctx)};
        require_valid_triplet(t, ctx);
        out.push_back(t);
    }
    return out;
}

std::string triplets_to_csv(const std::vector<MaterialTriplet>& triplets) {
    std::string out = "e_pa,nu,rho_kgm3\n";
    for (const auto& t : triplets)
        out += fmt17(t.e) + "," + fmt17(t.nu) + "," + fmt17(t.rho) + "\n";
    return out;
}

void write_triplets_csv(const std::vector<MaterialTriplet>& triplets,
                        const std::string& path) {
    spit(path, triplets_to_csv(triplets));
}

std::vector<IndexedTriplet> read_materials_csv(const std::string& path) {
    std::istringstream in(slurp(path));
    std::string line;
    if (!std::getline(in, line) || trim(line) != "voxel_index,e_pa,nu,rho_kgm3")
        throw std::runtime_error("materials csv '" + path +
                                 "': missing voxel_index,e_pa,nu,rho_kgm3 header");
    std::vector<IndexedTriplet> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cols = split(line, ',');
        if (cols.size() != 4)
            throw std::runtime_error("materials csv line " + std::to_string(lineno) +
                                     ": expected 4 columns");
        const std::string ctx = "materials csv line " + std::to_string(lineno);
        IndexedTriplet it;
        it.voxel_index = static_cast<std::size_t>(parse_double(cols[0], ctx));
        it.triplet = {parse_double(cols[1], ctx), parse_double(cols[2], ctx),
                      parse_double(cols[3], ctx)};
        require_valid_triplet(it.triplet, ctx);
        out.push_back(it);
    }
    return out;
}

void write_materials_csv(const std::vector<MaterialTriplet>& materials,
                         const std::string& path) {
    std::string out = "voxel_index,e_pa,nu,rho_kgm3\n";
    for (std::size_t i = 0; i < materials.size(); ++i)
        out += std::to_string(i) + "," + fmt17(materials[i].e) + "," +
               fmt17(materials[i].nu) + "," + fmt17(materials[i].rho) + "\n";
    spit(path, out);
}

void write_voxf(const SolidVoxelization& vox, const std::string& path) {
    ByteWriter w;
    w.bytes("VOXF", 4);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(vox.resolution));
    w.u32(static_cast<std::uint32_t>(vox.centers.size()));
    for (std::size_t i = 0; i < vox.centers.size(); ++i) {
        for (int a = 0; a < 3; ++a)
            w.u16(static_cast<std::uint16_t>(vox.indices[i][static_cast<std::size_t>(a)]));
        for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(vox.centers[i](a)));
        const int sid = vox.segment_of.empty() ? -1 : vox.segment_of[i];
        w.u32(sid < 0 ? 0xFFFFFFFFu : static_cast<std::uint32_t>(sid));
    }
    w.u32(static_cast<std::uint32_t>(vox.segment_names.size()));
    for (const auto& name : vox.segment_names) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
    }
    spit(path, w.data());
}

SolidVoxelization read_voxf(const std::string& path) {
    const std::string buf = slurp(path);
    ByteReader r(buf);
    if (r.bytes(4) != "VOXF") throw std::runtime_error("'" + path + "' is not a VOXF file");
    if (r.u32() != 1) throw std::runtime_error("VOXF '" + path + "': unsupported version");
    SolidVoxelization vox;
    vox.resolution = static_cast<int>(r.u32());
    const std::uint32_t count = r.u32();
    vox.centers.reserve(count);
    vox.indices.reserve(count);
    vox.segment_of.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::array<int, 3> idx{};
        for (int a = 0; a < 3; ++a) idx[static_cast<std::size_t>(a)] = r.u16();
        Eigen::Vector3d center;
        for (int a = 0; a < 3; ++a) center(a) = r.f32();
        const std::uint32_t sid = r.u32();
        vox.indices.push_back(idx);
        vox.centers.push_back(center);
        vox.segment_of.push_back(sid == 0xFFFFFFFFu ? -1 : static_cast<int>(sid));
    }
    const std::uint32_t nstr = r.u32();
    for (std::uint32_t i = 0; i < nstr; ++i) {
        const std::uint32_t len = r.u32();
        vox.segment_names.push_back(r.bytes(len));
    }
    if (!r.at_end()) throw std::runtime_error("VOXF '" + path + "': trailing bytes");
    for (int sid : vox.segment_of)
        if (sid >= 0 && sid >= static_cast<int>(vox.segment_names.size()))
            throw std::runtime_error("VOXF '" + path + "': segment index out of range");
    return vox;
}

void write_vfmp(const FeatureMap& map, const std::string& path) {
    validate_feature_map(map);
    ByteWriter w;
    w.bytes("VFMP", 4);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(map.n));
    w.u32(static_cast<std::uint32_t>(map.c));
    for (float v : map.data) w.f32(v);
    spit(path, w.data());
}

FeatureMap read_vfmp(const std::string& path) {
    const std::string buf = slurp(path);
    ByteReader r(buf);
    if (r.bytes(4) != "VFMP") throw std::runtime_error("'" + path + "' is not a VFMP file");
    if (r.u32() != 1) throw std::runtime_error("VFMP '" + path + "': unsupported version");
    FeatureMap map;
    map.n = static_cast<int>(r.u32());
    map.c = static_cast<int>(r.u32());
    if (map.n < 2 || map.c < 1)
        throw std::runtime_error("VFMP '" + path + "': bad dimensions");
    const std::size_t total = static_cast<std::size_t>(map.n) * map.n * map.c;
    map.data.resize(total);
    for (std::size_t i = 0; i < total; ++i) map.data[i] = r.f32();
    if (!r.at_end()) throw std::runtime_error("VFMP '" + path + "': trailing bytes");
    validate_feature_map(map);
    return map;
}

void write_vfea(const VoxelFeatures& features, const std::string& path) {
    ByteWriter w;
    w.bytes("VFEA", 4);
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(features.values.cols()));
    w.u32(static_cast<std::uint32_t>(features.channels));
    for (Eigen::Index i = 0; i < features.values.cols(); ++i)
        for (int ch = 0; ch < features.channels; ++ch)
            w.f32(static_cast<float>(features.values(ch, i)));
    for (auto flag : features.seen) w.u8(flag);
    spit(path, w.data());
}

VoxelFeatures read_vfea(const std::string& path) {
    const std::string buf = slurp(path);
    ByteReader r(buf);
    if (r.bytes(4) != "VFEA") throw std::runtime_error("'" + path + "' is not a VFEA file");
    if (r.u32() != 1) throw std::runtime_error("VFEA '" + path + "': unsupported version");
    const std::uint32_t count = r.u32();
    const std::uint32_t c = r.u32();
    VoxelFeatures out;
    out.channels = static_cast<int>(c);
    out.values = Eigen::MatrixXd::Zero(c, count);
    for (std::uint32_t i = 0; i < count; ++i)
        for (std::uint32_t ch = 0; ch < c; ++ch) out.values(ch, i) = r.f32();
    out.seen.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) out.seen[i] = r.u8();
    if (!r.at_end()) throw std::runtime_error("VFEA '" + path + "': trailing bytes");
    return out;
}

std::vector<CameraView> read_cameras_json(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(slurp(path));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("camera json '" + path + "': " + e.what());
    }
    if (!j.is_array()) throw std::runtime_error("camera json '" + path + "': expected array");
    std::vector<CameraView> views;
    for (const auto& item : j) {
        CameraView v;
        const auto& m = item.at("world_to_camera");
        if (!m.is_array() || m.size() != 16)
            throw std::runtime_error("camera json: world_to_camera needs 16 floats");
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c)
                v.world_to_camera(r, c) = m[static_cast<std::size_t>(r * 4 + c)].get<double>();
        v.fov_y_deg = item.at("fov_y_deg").get<double>();
        v.width = item.at("width").get<int>();
        v.height = item.at("height").get<int>();
        validate_view(v);
        views.push_back(v);
    }
    return views;
}

std::string cameras_to_json(const std::vector<CameraView>& views) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& v : views) {
        nlohmann::json m = nlohmann::json::array();
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) m.push_back(v.world_to_camera(r, c));
        j.push_back({{"world_to_camera", std::move(m)},
                     {"fov_y_deg", v.fov_y_deg},
                     {"width", v.width},
                     {"height", v.height}});
    }
    return j.dump(1);
}

void write_cameras_json(const std::vector<CameraView>& views, const std::string& path) {
    spit(path, cameras_to_json(views));
}

}  // namespace matfield::io
