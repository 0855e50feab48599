#pragma once

#include <cstdio>
#include <filesystem>

#include "binloc/dataset.hpp"
#include "binloc/gcc.hpp"
#include "binloc/scene.hpp"
#include "test_util.hpp"

namespace binloc::testing {

/// Hand-built listening pool: `per_point` records per (SNR, grid azimuth) with
/// cached features and a short stimulus WAV each. Features come from an anechoic
/// synthetic-head scene, so SRP localises them.
inline DatasetManifest make_listening_pool(const std::filesystem::path& dir, std::size_t per_point = 2,
                                           std::vector<double> snrs = {-15.0, 0.0, 15.0}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "audio");
  DatasetManifest m;
  m.root = dir;
  m.config_hash = "pool";
  std::size_t index = 0;
  for (double snr : snrs)
    for (int az = -90; az <= 90; az += 15)
      for (std::size_t k = 0; k < per_point; ++k, ++index) {
        const auto src = white_noise(4000, 1000 + index, 0.1);
        auto scene = spatialize(AudioBuffer::mono(16000, src), synth_head_brir(az, {}, {}, 16000, 0));
        scene.resize(src.size());
        char name[32];
        std::snprintf(name, sizeof(name), "rec_%06zu", index);
        DatasetRecord r;
        r.path = std::string("features/") + name + ".gcc";
        r.audio_path = std::string("audio/") + name + ".wav";
        r.azimuth_deg = az;
        r.snr_db = snr;
        r.split = Split::test;
        write_feature_file(extract_features(scene), direction_from_azimuth(az), dir / r.path);
        write_wav(scene, dir / r.audio_path, WavEncoding::float32);
        m.records.push_back(std::move(r));
      }
  write_manifest(m, dir / "manifest.tsv");
  return m;
}

}  // namespace binloc::testing
