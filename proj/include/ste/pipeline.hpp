#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ste/geom.hpp"
#include "ste/imagecore.hpp"
#include "ste/net.hpp"
#include "ste/region.hpp"

namespace ste {

// {"regions": [{"kind": "axis_aligned"|"quad"|"polygon", "points": [[x, y], ...]}]}
std::vector<TextRegion> parse_regions(const nlohmann::json& j);
std::vector<TextRegion> load_regions(const std::filesystem::path& path);
nlohmann::json regions_to_json(const std::vector<TextRegion>& regions);

struct CropResult {
  ImageBuffer image;  // erased crop, same size as the input crop
  StrokeMask mask;    // 1 = background, 0 = erased text
};

// Erases one network-sized crop. Implementations must be safe to call
// concurrently when `EraseOptions::parallel` is set.
using CropEraser = std::function<CropResult(const ImageBuffer& crop)>;

// Runs the network in eval mode without gradients and returns its final image.
CropEraser network_eraser(EraseNet<float>& net);
// Returns the crop unchanged with an all-text mask, so the whole geometric
// round trip reaches the output.
CropEraser identity_eraser();

struct EraseOptions {
  double expand_factor = 0.15;
  geom::Size network_size{geom::kNetworkHeight, geom::kNetworkWidth};
  bool parallel = false;  // regions are processed concurrently, then pasted in input order
};

struct EraseResult {
  ImageBuffer image;
  StrokeMask mask;  // full-size composite, 1 = background
  std::vector<std::string> warnings;
  int erased = 0;
};

// expand -> crop -> rectify (perspective for quads, TPS for polygons) ->
// resize_pad -> erase -> unpad -> un-rectify -> paste_back inside the original
// region. Regions that fail are skipped with a warning.
EraseResult erase_regions(const ImageBuffer& image, const std::vector<TextRegion>& regions,
                          const CropEraser& eraser, const EraseOptions& options = {});

}  // namespace ste
