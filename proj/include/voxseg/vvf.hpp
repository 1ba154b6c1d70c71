#pragma once

#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "voxseg/volume.hpp"

// VVF container: "VVOL1" magic line, ASCII key=value header, blank line,
// then the raw little-endian payload in linearization order (probmap stores
// K contiguous channel grids).

namespace voxseg {

enum class vvf_kind { volume, labels, probmap };

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

inline std::string vvf_header(vvf_kind kind, const dims3& d, const spacing3& s, int classes) {
    std::ostringstream h;
    h << "VVOL1\n";
    h << "kind=" << (kind == vvf_kind::volume ? "volume" : kind == vvf_kind::labels ? "labels" : "probmap") << "\n";
    h << "dims=" << d.x << "," << d.y << "," << d.z << "\n";
    h << "spacing=" << fmt_double(s.x) << "," << fmt_double(s.y) << "," << fmt_double(s.z) << "\n";
    h << "dtype=" << (kind == vvf_kind::labels ? "u8" : "f32") << "\n";
    if (kind != vvf_kind::volume) h << "classes=" << classes << "\n";
    h << "\n";
    return h.str();
}

struct vvf_file {
    vvf_kind kind;
    dims3 dim;
    spacing3 sp;
    int classes = 0;
    std::string dtype;
    std::vector<char> payload;
};

inline bool parse_triple(const std::string& s, double out[3]) {
    std::istringstream is(s);
    std::string tok;
    for (int i = 0; i < 3; ++i) {
        if (!std::getline(is, tok, ',')) return false;
        try {
            size_t pos = 0;
            out[i] = std::stod(tok, &pos);
            if (pos != tok.size()) return false;
        } catch (...) {
            return false;
        }
    }
    return !std::getline(is, tok, ',');
}

inline vvf_file read_vvf_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "VVOL1") fail_data(path + ": bad magic");

    std::map<std::string, std::string> kv;
    while (std::getline(in, line)) {
        if (line.empty()) break;
        auto eq = line.find('=');
        if (eq == std::string::npos) fail_data(path + ": malformed header line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }

    vvf_file f;
    auto need = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) fail_data(path + ": missing header key '" + std::string(key) + "'");
        return it->second;
    };

    std::string kind = need("kind");
    if (kind == "volume") f.kind = vvf_kind::volume;
    else if (kind == "labels") f.kind = vvf_kind::labels;
    else if (kind == "probmap") f.kind = vvf_kind::probmap;
    else fail_data(path + ": unknown kind '" + kind + "'");

    double t[3];
    if (!parse_triple(need("dims"), t)) fail_data(path + ": malformed dims");
    f.dim = {int(t[0]), int(t[1]), int(t[2])};
    check_dims(f.dim);
    if (!parse_triple(need("spacing"), t)) fail_data(path + ": malformed spacing");
    f.sp = {t[0], t[1], t[2]};
    check_spacing(f.sp);

    f.dtype = need("dtype");
    if (f.dtype != "f32" && f.dtype != "u8") fail_data(path + ": unknown dtype '" + f.dtype + "'");

    if (f.kind != vvf_kind::volume) {
        f.classes = std::atoi(need("classes").c_str());
        if (f.classes < 2) fail_data(path + ": classes must be >= 2");
    }

    size_t elems = f.dim.voxels() * (f.kind == vvf_kind::probmap ? size_t(f.classes) : 1);
    size_t bytes = elems * (f.dtype == "f32" ? 4 : 1);
    f.payload.resize(bytes);
    in.read(f.payload.data(), std::streamsize(bytes));
    if (size_t(in.gcount()) != bytes) fail_data(path + ": payload shorter than declared dims");
    char extra;
    if (in.read(&extra, 1), in.gcount() != 0) fail_data(path + ": payload longer than declared dims");
    return f;
}

inline void write_bytes(const std::string& path, const std::string& header, const void* data, size_t bytes) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_data("cannot write " + path);
    out.write(header.data(), std::streamsize(header.size()));
    out.write(static_cast<const char*>(data), std::streamsize(bytes));
    if (!out) fail_data("write failed for " + path);
}

} // namespace detail

inline void write_vvf(const volume& v, const std::string& path) {
    check_finite(v);
    detail::write_bytes(path, detail::vvf_header(vvf_kind::volume, v.dim(), v.spacing(), 0),
                        v.data(), v.size() * 4);
}

inline void write_vvf(const label_map& m, const std::string& path) {
    check_labels(m);
    detail::write_bytes(path, detail::vvf_header(vvf_kind::labels, m.dim(), m.spacing(), m.num_classes),
                        m.data(), m.size());
}

inline void write_vvf(const probability_map& p, const std::string& path) {
    detail::write_bytes(path, detail::vvf_header(vvf_kind::probmap, p.dim(), p.spacing(), p.num_classes()),
                        p.raw().data(), p.raw().size() * 4);
}

inline vvf_kind peek_vvf_kind(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open " + path);
    std::string magic, kind;
    if (!std::getline(in, magic) || magic != "VVOL1") fail_data(path + ": bad magic");
    while (std::getline(in, kind) && kind.rfind("kind=", 0) != 0) {
        if (kind.empty()) break;
    }
    if (kind.rfind("kind=", 0) != 0) fail_data(path + ": missing kind");
    kind = kind.substr(5);
    if (kind == "volume") return vvf_kind::volume;
    if (kind == "labels") return vvf_kind::labels;
    if (kind == "probmap") return vvf_kind::probmap;
    fail_data(path + ": unknown kind '" + kind + "'");
}

inline volume read_vvf_volume(const std::string& path) {
    auto f = detail::read_vvf_file(path);
    if (f.kind != vvf_kind::volume) fail_data(path + ": expected kind=volume");
    if (f.dtype != "f32") fail_data(path + ": volume payload must be f32");
    volume v(f.dim, f.sp);
    std::memcpy(v.data(), f.payload.data(), f.payload.size());
    check_finite(v);
    return v;
}

inline label_map read_vvf_labels(const std::string& path) {
    auto f = detail::read_vvf_file(path);
    if (f.kind != vvf_kind::labels) fail_data(path + ": expected kind=labels");
    if (f.dtype != "u8") fail_data(path + ": label payload must be u8");
    label_map m(f.dim, f.sp, f.classes);
    std::memcpy(m.data(), f.payload.data(), f.payload.size());
    check_labels(m);
    return m;
}

inline probability_map read_vvf_probmap(const std::string& path) {
    auto f = detail::read_vvf_file(path);
    if (f.kind != vvf_kind::probmap) fail_data(path + ": expected kind=probmap");
    if (f.dtype != "f32") fail_data(path + ": probmap payload must be f32");
    probability_map p(f.dim, f.sp, f.classes);
    std::memcpy(p.raw().data(), f.payload.data(), f.payload.size());
    for (float x : p.raw())
        if (!std::isfinite(x)) fail_data(path + ": non-finite probability");
    return p;
}

} // namespace voxseg
