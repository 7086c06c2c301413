#pragma once

// Deterministic simulator and localization engine for metasurface-assisted
// indoor RSS positioning: scene geometry, reflection channel, compressive
// radio maps, Bayesian grid localization, and the experiment harness.

#include "metaradar/geometry.hpp"
#include "metaradar/rng.hpp"
#include "metaradar/scene.hpp"
#include "metaradar/channel.hpp"
#include "metaradar/radiomap.hpp"
#include "metaradar/localizer.hpp"
#include "metaradar/harness.hpp"
#include "metaradar/io.hpp"
#include "metaradar/verify.hpp"
