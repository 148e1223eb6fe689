"""Published per-layer parameter counts (original, compressed) for two reference networks."""

K, M = 1_000, 1_000_000

GOOGLENET_ROWS = [
    ("conv1_1", 9 * K, 4.5 * K),
    ("conv2", 115 * K, 57 * K),
    ("inception_3a", 164 * K, 33 * K),
    ("inception_3b", 389 * K, 77 * K),
    ("inception_4a", 376 * K, 75 * K),
    ("inception_4b", 449 * K, 90 * K),
    ("inception_4c", 510 * K, 102 * K),
    ("inception_4d", 605 * K, 121 * K),
    ("inception_4e", 868 * K, 174 * K),
    ("inception_5a", 1 * M, 200 * K),
    ("inception_5b", 1 * M, 200 * K),
    ("fc8", 1 * M, 200 * K),
]
GOOGLENET_TOTAL = (7 * M, 1.3 * M, "5.4X")

VGG16_ROWS = [
    ("conv1_1", 2 * K, 1 * K),
    ("conv1_2", 37 * K, 7 * K),
    ("conv2_1", 74 * K, 15 * K),
    ("conv2_2", 148 * K, 30 * K),
    ("conv3_1", 295 * K, 59 * K),
    ("conv3_2", 590 * K, 118 * K),
    ("conv3_3", 590 * K, 118 * K),
    ("conv4_1", 1 * M, 200 * K),
    ("conv4_2", 2 * M, 400 * K),
    ("conv4_3", 2 * M, 400 * K),
    ("conv5_1", 2 * M, 400 * K),
    ("conv5_2", 2 * M, 400 * K),
    ("conv5_3", 2 * M, 400 * K),
    ("fc6", 103 * M, 4.8 * M),
    ("fc7", 17 * M, 0.8 * M),
    ("fc8", 4 * M, 1 * M),
]
VGG16_TOTAL = (138 * M, 9 * M, "15.4X")
