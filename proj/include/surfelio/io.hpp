#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "surfelio/deskew.hpp"
#include "surfelio/imu.hpp"

namespace surfelio {

// Scan log: header `t,lidar_id,x,y,z,intensity`, t with 9 decimals, sensor
// frame coordinates. IMU log: header `t,wx,wy,wz,ax,ay,az`.
// Trajectories: TUM rows `t tx ty tz qx qy qz qw`, '#' comments allowed.

void write_scan_log(const std::filesystem::path& path, std::span<const RawPoint> points);
void write_imu_log(const std::filesystem::path& path, std::span<const ImuSample> samples);
void write_tum(const std::filesystem::path& path, std::span<const StampedPose> poses);

/// Strict parsers. Throw ParseError(file, line) on malformed rows and on
/// time going backwards within one stream (per lidar for scans, strictly
/// increasing for IMU and trajectories).
std::vector<RawPoint> parse_scan_log(const std::filesystem::path& path);
std::vector<ImuSample> parse_imu_log(const std::filesystem::path& path);
std::vector<StampedPose> parse_tum(const std::filesystem::path& path);

/// Maps sensor-frame points into the body frame; lidars without an entry
/// keep the identity.
void apply_extrinsics(std::span<RawPoint> points, const std::map<int, Pose>& extrinsics);

/// Binary little-endian PLY with float x y z, plus a float intensity column
/// when `intensity` is given (one value per point).
void write_ply(const std::filesystem::path& path, std::span<const Vec3> points,
               std::span<const float> intensity = {});

}  // namespace surfelio
