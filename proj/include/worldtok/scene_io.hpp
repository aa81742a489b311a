// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "container.hpp"
#include "scene.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace worldtok {

// A scene file is a GSDW container holding a "JSON" manifest followed by a
// "PRIM" chunk of float32 records, one per primitive in storage order:
//   position[3] opacity_logit log_scale[3] rotation[4 (qx qy qz qw)] color[3] latent[W]

inline constexpr int kFixedRecordFloats = 14;

inline nlohmann::json
vec_json(const Vec3 &v) {
    return nlohmann::json::array({v.x(), v.y(), v.z()});
}

inline Vec3
json_vec3(const nlohmann::json &j) {
    require(j.is_array() && j.size() == 3, ErrorKind::SchemaViolation, "expected 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json
scene_manifest(const GaussianScene &scene) {
    return {{"scene_id", scene.scene_id()},
            {"count", scene.size()},
            {"lang_dim", scene.lang_dim()},
            {"lang_levels", scene.lang_levels()},
            {"record_floats", kFixedRecordFloats + scene.latent_width()},
            {"bounds", {{"lo", vec_json(scene.bounds().lo)}, {"hi", vec_json(scene.bounds().hi)}}}};
}

inline Bytes
encode_scene(const GaussianScene &scene) {
    Container c;
    c.add_json(scene_manifest(scene));
    Bytes rec;
    rec.reserve(scene.size() * (kFixedRecordFloats + scene.latent_width()) * 4);
    auto f = [&](double v) { put_f32(rec, static_cast<float>(v)); };
    for (const auto &p : scene.primitives()) {
        for (int k = 0; k < 3; ++k) f(p.position[k]);
        f(p.opacity_logit);
        for (int k = 0; k < 3; ++k) f(p.log_scale[k]);
        f(p.rotation.x());
        f(p.rotation.y());
        f(p.rotation.z());
        f(p.rotation.w());
        for (int k = 0; k < 3; ++k) f(p.color[k]);
        for (Eigen::Index k = 0; k < p.lang_latent.size(); ++k) f(p.lang_latent[k]);
    }
    c.add("PRIM", std::move(rec));
    return c.serialize();
}

inline GaussianScene
decode_scene(std::span<const std::uint8_t> bytes) {
    const Container c = Container::parse(bytes);
    const nlohmann::json m = c.manifest();
    std::string id;
    std::size_t count = 0;
    int lang_dim = 0, lang_levels = 0;
    Aabb bounds;
    try {
        id = m.at("scene_id").get<std::string>();
        count = m.at("count").get<std::size_t>();
        lang_dim = m.at("lang_dim").get<int>();
        lang_levels = m.value("lang_levels", 1);
        bounds.lo = json_vec3(m.at("bounds").at("lo"));
        bounds.hi = json_vec3(m.at("bounds").at("hi"));
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::SchemaViolation, std::string("scene manifest: ") + e.what());
    }
    require(lang_dim >= 1 && (lang_levels == 1 || lang_levels == 3), ErrorKind::InvariantViolation,
            "scene manifest: invalid lang_dim/lang_levels");
    const int width = lang_dim * lang_levels;
    const Chunk &prim = c.get("PRIM");
    const std::size_t record_bytes = static_cast<std::size_t>(kFixedRecordFloats + width) * 4;
    require(prim.payload.size() >= count * record_bytes, ErrorKind::Truncated,
            "truncated payload: primitive records end mid-record");
    require(prim.payload.size() == count * record_bytes, ErrorKind::SchemaViolation,
            "primitive chunk size does not match manifest count");
    ByteReader r(prim.payload);
    std::vector<GaussianPrimitive> prims(count);
    for (auto &p : prims) {
        for (int k = 0; k < 3; ++k) p.position[k] = r.f32();
        p.opacity_logit = r.f32();
        for (int k = 0; k < 3; ++k) p.log_scale[k] = r.f32();
        const double qx = r.f32(), qy = r.f32(), qz = r.f32(), qw = r.f32();
        p.rotation = UnitQuaternion(qx, qy, qz, qw);
        for (int k = 0; k < 3; ++k) p.color[k] = r.f32();
        p.lang_latent.resize(width);
        for (int k = 0; k < width; ++k) p.lang_latent[k] = r.f32();
    }
    return GaussianScene(std::move(id), std::move(prims), lang_dim, lang_levels, bounds);
}

inline void
save_scene(const GaussianScene &scene, const std::filesystem::path &path) {
    write_file(path, encode_scene(scene));
}

inline GaussianScene
load_scene(const std::filesystem::path &path) {
    return decode_scene(read_file(path));
}

// Camera JSON: {"fx","fy","cx","cy","width","height",
//               "rotation":[qx,qy,qz,qw], "translation":[x,y,z]}  (world_from_camera)

inline nlohmann::json
camera_to_json(const CameraModel &cam) {
    const auto &q = cam.world_from_camera.rotation;
    return {{"fx", cam.fx},
            {"fy", cam.fy},
            {"cx", cam.cx},
            {"cy", cam.cy},
            {"width", cam.width},
            {"height", cam.height},
            {"rotation", {q.x(), q.y(), q.z(), q.w()}},
            {"translation", vec_json(cam.world_from_camera.translation)}};
}

inline CameraModel
camera_from_json(const nlohmann::json &j) {
    CameraModel cam;
    try {
        cam.fx = j.at("fx").get<double>();
        cam.fy = j.at("fy").get<double>();
        cam.cx = j.at("cx").get<double>();
        cam.cy = j.at("cy").get<double>();
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        if (j.contains("rotation")) {
            const auto &q = j.at("rotation");
            require(q.is_array() && q.size() == 4, ErrorKind::SchemaViolation,
                    "camera rotation must be [qx, qy, qz, qw]");
            cam.world_from_camera.rotation = UnitQuaternion(q[0].get<double>(), q[1].get<double>(),
                                                            q[2].get<double>(), q[3].get<double>());
        }
        if (j.contains("translation")) cam.world_from_camera.translation = json_vec3(j.at("translation"));
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::SchemaViolation, std::string("camera: ") + e.what());
    }
    cam.validate();
    return cam;
}

} // namespace worldtok
