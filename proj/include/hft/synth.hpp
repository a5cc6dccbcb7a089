#ifndef HFT_SYNTH_HPP
#define HFT_SYNTH_HPP

#include <string>

#include "hft/dataset.hpp"

namespace hft {

// Procedural 10-class image families for desk-scale experiments. The two
// families draw from disjoint generators so they can play the roles of a
// target dataset and an out-of-distribution trigger source.
//
//   Shapes — textured geometric motifs on gradient backgrounds with random
//            foreground/background colors; class identity is the motif.
//   Signs  — bordered sign plates (circle/triangle/diamond/...) with glyphs
//            on scene backgrounds; class identity is plate shape + face.
//
// Generation is deterministic in (family, split, per_class, seed). Pixels
// are quantized to the u8 grid so in-memory data equals a disk round-trip.
enum class SynthFamily { Shapes, Signs };

SynthFamily synth_family_from_string(const std::string& s);
std::string to_string(SynthFamily f);

DatasetSplit make_synthetic(SynthFamily family, SplitKind kind, int per_class,
                            std::uint64_t seed, int size = 32);

}  // namespace hft

#endif
