#pragma once

#include <raycal/aberration.hpp>
#include <raycal/attention.hpp>
#include <raycal/core.hpp>
#include <raycal/diffusion.hpp>
#include <raycal/distortion.hpp>
#include <raycal/fit.hpp>
#include <raycal/image.hpp>
#include <raycal/io.hpp>
#include <raycal/lens_db.hpp>
#include <raycal/metrics.hpp>
#include <raycal/ray_camera.hpp>
#include <raycal/rng.hpp>
