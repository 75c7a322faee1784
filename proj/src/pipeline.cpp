#include "ste/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <optional>

namespace ste {

using nlohmann::json;

std::vector<TextRegion> parse_regions(const json& j) {
  std::vector<TextRegion> out;
  try {
    for (const json& r : j.at("regions")) {
      const std::string kind = r.at("kind").get<std::string>();
      std::vector<Point2> pts;
      for (const json& p : r.at("points")) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
          throw Error(ErrorKind::kParseError, "region points must be [x, y] number pairs");
        }
        pts.push_back({p[0].get<double>(), p[1].get<double>()});
      }
      if (kind == "axis_aligned") {
        if (pts.size() != 2) throw Error(ErrorKind::kParseError, "axis_aligned regions take 2 points");
        out.push_back(TextRegion::axis_aligned(pts[0].x, pts[0].y, pts[1].x, pts[1].y));
      } else if (kind == "quad") {
        if (pts.size() != 4) throw Error(ErrorKind::kParseError, "quad regions take 4 points");
        out.push_back(TextRegion::quad({pts[0], pts[1], pts[2], pts[3]}));
      } else if (kind == "polygon") {
        out.push_back(TextRegion::polygon(pts));
      } else {
        throw Error(ErrorKind::kParseError, "unknown region kind \"" + kind + "\"");
      }
      out.back().validate();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParseError, std::string("regions: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kParseError) throw;
    throw Error(ErrorKind::kParseError, e.what());
  }
  return out;
}

std::vector<TextRegion> load_regions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kFileNotFound, path.string());
  try {
    return parse_regions(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParseError, path.string() + ": " + e.what());
  }
}

json regions_to_json(const std::vector<TextRegion>& regions) {
  json list = json::array();
  for (const TextRegion& r : regions) {
    json pts = json::array();
    for (const Point2& p : r.points) pts.push_back({p.x, p.y});
    const char* kind = r.kind == RegionKind::kAxisAligned ? "axis_aligned" : r.kind == RegionKind::kQuad ? "quad" : "polygon";
    list.push_back({{"kind", kind}, {"points", pts}});
  }
  return {{"regions", list}};
}

CropEraser network_eraser(EraseNet<float>& net) {
  net.set_training(false);
  return [&net](const ImageBuffer& crop) {
    nn::NoGradGuard guard;
    const EraseOutput<float> out = net.forward(nn::Var<float>(image_to_tensor<float>(crop)));
    return CropResult{tensor_to_image(out.final_image.value()), tensor_to_mask(out.valid)};
  };
}

CropEraser identity_eraser() {
  return [](const ImageBuffer& crop) { return CropResult{crop, StrokeMask(crop.height(), crop.width(), 0.0f)}; };
}

namespace {

struct RegionJob {
  const TextRegion* region = nullptr;
  int x0 = 0, y0 = 0;
  CropResult restored;
};

TextRegion translated(const TextRegion& r, double dx, double dy) {
  TextRegion out = r;
  for (Point2& p : out.points) {
    p.x += dx;
    p.y += dy;
  }
  return out;
}

constexpr geom::Interpolation kImageInterp = geom::Interpolation::kBicubic;

// Size resize_pad would produce: full network height, width capped.
geom::Size fitted_size(geom::Size base, geom::Size network) {
  const double scale = static_cast<double>(network.height) / std::max(base.height, 1);
  const int width = static_cast<int>(std::lround(base.width * scale));
  return {network.height, std::clamp(width, 1, network.width)};
}

// Crop, rectify, erase and restore one region; returns the erased crop in
// canvas-aligned crop coordinates.
RegionJob process(const ImageBuffer& image, const TextRegion& region, const CropEraser& eraser,
                  const EraseOptions& opt) {
  region.validate();
  const int w = image.width(), h = image.height();
  const Box b0 = region.bounds();
  if (b0.x1 <= 0 || b0.y1 <= 0 || b0.x0 >= w || b0.y0 >= h) {
    throw Error(ErrorKind::kRegionOutOfBounds, "region lies outside the image");
  }
  const TextRegion expanded = geom::expand_region(region.clipped(w, h), {h, w}, opt.expand_factor);
  const Box b = expanded.bounds();
  RegionJob job;
  job.region = &region;
  job.x0 = std::clamp(static_cast<int>(std::floor(b.x0)), 0, w - 1);
  job.y0 = std::clamp(static_cast<int>(std::floor(b.y0)), 0, h - 1);
  const int x1 = std::clamp(static_cast<int>(std::ceil(b.x1)), job.x0 + 1, w);
  const int y1 = std::clamp(static_cast<int>(std::ceil(b.y1)), job.y0 + 1, h);
  const ImageBuffer crop = image.crop(job.x0, job.y0, x1 - job.x0, y1 - job.y0);
  const geom::Size crop_size{crop.height(), crop.width()};
  const TextRegion local = translated(expanded, -job.x0, -job.y0);

  // Rectify straight to network resolution so resize_pad only pads and the
  // chain resamples twice in total.
  const geom::Size base = local.kind == RegionKind::kAxisAligned
                              ? geom::Size{crop.height(), crop.width()}
                              : geom::rectified_size(local);
  const geom::Size size = fitted_size(base, opt.network_size);
  std::optional<geom::Homography> hom;
  std::optional<geom::TpsWarp> tps;
  ImageBuffer rect;
  const double rw = size.width, rh = size.height;
  if (local.kind == RegionKind::kPolygon) {
    tps = geom::fit_tps(local.points, geom::rectangle_rim(local, size));
    rect = geom::warp_tps(crop, *tps, size, geom::WarpDirection::kForward, kImageInterp);
  } else {
    std::array<Point2, 4> src;
    if (local.kind == RegionKind::kQuad) {
      src = {local.points[0], local.points[1], local.points[2], local.points[3]};
    } else {
      const double cw = crop.width(), ch = crop.height();
      src = {Point2{0, 0}, Point2{cw, 0}, Point2{cw, ch}, Point2{0, ch}};
    }
    hom = geom::solve_homography(src, {Point2{0, 0}, Point2{rw, 0}, Point2{rw, rh}, Point2{0, rh}});
    rect = geom::warp_perspective(crop, *hom, size, kImageInterp);
  }

  const geom::Padded padded = geom::resize_pad(rect, opt.network_size);
  const CropResult erased = eraser(padded.image);
  ImageBuffer img = geom::unpad(erased.image, padded.restore);
  StrokeMask mask = geom::unpad(erased.mask, padded.restore);
  if (hom) {
    img = geom::warp_perspective(img, hom->inverse(), crop_size, kImageInterp);
    mask = geom::warp_perspective(mask, hom->inverse(), crop_size);
  } else {
    img = geom::warp_tps(img, *tps, crop_size, geom::WarpDirection::kInverse, kImageInterp);
    mask = geom::warp_tps(mask, *tps, crop_size, geom::WarpDirection::kInverse);
  }
  for (float& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);
  job.restored = {std::move(img), std::move(mask)};
  return job;
}

}  // namespace

EraseResult erase_regions(const ImageBuffer& image, const std::vector<TextRegion>& regions, const CropEraser& eraser,
                          const EraseOptions& opt) {
  EraseResult res{image, StrokeMask(image.height(), image.width(), 1.0f), {}, 0};
  std::vector<std::optional<RegionJob>> jobs(regions.size());
  std::vector<std::string> errors(regions.size());
  auto run = [&](std::size_t i) {
    try {
      jobs[i] = process(image, regions[i], eraser, opt);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  };
  if (opt.parallel && regions.size() > 1) {
    std::vector<std::future<void>> fs;
    for (std::size_t i = 0; i < regions.size(); ++i) fs.push_back(std::async(std::launch::async, run, i));
    for (auto& f : fs) f.get();
  } else {
    for (std::size_t i = 0; i < regions.size(); ++i) run(i);
  }
  // Paste in input order so overlaps resolve deterministically.
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (!jobs[i]) {
      res.warnings.push_back("region " + std::to_string(i) + " skipped: " + errors[i]);
      continue;
    }
    const RegionJob& j = *jobs[i];
    res.image = geom::paste_back(res.image, j.restored.image, *j.region, j.x0, j.y0);
    res.mask = geom::paste_back(res.mask, j.restored.mask, *j.region, j.x0, j.y0);
    ++res.erased;
  }
  return res;
}

}  // namespace ste
