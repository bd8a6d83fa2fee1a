//! Shared fixtures for the benchmarks.

use isac_core::{build_channels, default_paper_scene, ChannelSet, PaperScene, Scene};

/// A built-in scene at the given array size together with its channels.
pub fn fixture(kind: PaperScene, antennas: usize) -> (Scene, ChannelSet) {
    let scene = default_paper_scene(kind).with_antennas(antennas);
    let ch = build_channels(&scene).expect("built-in scenes are valid");
    (scene, ch)
}
