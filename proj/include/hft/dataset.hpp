#ifndef HFT_DATASET_HPP
#define HFT_DATASET_HPP

#include <optional>
#include <string>
#include <vector>

#include "hft/image.hpp"

namespace hft {

struct LabeledImage {
    Image pixels;           // [0,1] floats, CHW
    int label = 0;
    std::string source_id;  // "<dataset>/<class>/<file>" or packed-row id
};

enum class SplitKind { Train, Test };

struct DatasetSplit {
    std::vector<LabeledImage> images;  // ordered lexicographically by source_id
    int class_count = 0;
    std::vector<std::string> class_names;  // optional, size class_count when present
    SplitKind kind = SplitKind::Train;
    std::string dataset_name;

    std::size_t size() const { return images.size(); }
    void validate() const;  // labels < class_count, pixels in [0,1]
};

struct ClassRemapResult {
    DatasetSplit split;
    int removed_class = -1;
    std::vector<int> label_mapping;  // old label -> new label, removed -> -1
};

// Auto-detects the on-disk format: a `manifest.txt` next to a pixel blob
// means the packed layout, otherwise a directory of integer-named class
// folders with PNM files. See docs/formats.md.
DatasetSplit load_dataset(const std::string& path, const std::string& name, SplitKind kind);

void save_dataset_packed(const DatasetSplit& split, const std::string& dir);
void save_dataset_folders(const DatasetSplit& split, const std::string& dir);

DatasetSplit select_class(const DatasetSplit& split, int class_id);
ClassRemapResult remove_class(const DatasetSplit& split, int class_id);

// resize + clamp to the working resolution; identity when sizes match
LabeledImage resize_normalize(const LabeledImage& img, int target_h, int target_w);
DatasetSplit resize_split(const DatasetSplit& split, int target_h, int target_w);

// Filters `test` the way HF-OOCD evaluation needs: drop the removed class,
// rewrite surviving labels through the mapping.
DatasetSplit apply_remap(const DatasetSplit& test, const ClassRemapResult& remap);

}  // namespace hft

#endif
