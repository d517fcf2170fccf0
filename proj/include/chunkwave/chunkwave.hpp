#pragma once

#include "chunkwave/audio_buffer.hpp"
#include "chunkwave/chunked_ar.hpp"
#include "chunkwave/cumsum_lab.hpp"
#include "chunkwave/error.hpp"
#include "chunkwave/metrics.hpp"
#include "chunkwave/parallel.hpp"
#include "chunkwave/pitch.hpp"
#include "chunkwave/receptive.hpp"
#include "chunkwave/signal.hpp"
#include "chunkwave/spectral.hpp"
#include "chunkwave/tinynet.hpp"
