#pragma once

#include "ballssl/backbone.hpp"
#include "ballssl/checkpoint.hpp"
#include "ballssl/data/augment.hpp"
#include "ballssl/data/batch.hpp"
#include "ballssl/data/corpus.hpp"
#include "ballssl/data/episode.hpp"
#include "ballssl/data/patches.hpp"
#include "ballssl/data/pseudo_labels.hpp"
#include "ballssl/data/split.hpp"
#include "ballssl/data/synthetic.hpp"
#include "ballssl/detector.hpp"
#include "ballssl/finetune.hpp"
#include "ballssl/image.hpp"
#include "ballssl/meta.hpp"
#include "ballssl/metrics.hpp"
#include "ballssl/pretext.hpp"
