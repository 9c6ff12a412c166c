use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::packed::{PackedVideo, CHANNELS};
use super::{LabeledVideo, LEVELS};

/// Zero-sum channel tint, so every pixel's channel mean equals the base brightness.
const TINT: [f64; CHANNELS] = [1.0, -0.5, -0.5];

/// Generates `count` textured videos whose mean brightness encodes the label.
///
/// Labels cycle through the four engagement levels before shuffling, so every level is
/// present when `count >= 4`. Each pixel is `255·label` plus a moving checkerboard and
/// noise multiplied by a zero-sum channel tint, clipped to the available headroom; level 0
/// is therefore all black and level 1 all white.
pub fn synth_dataset(
    count: usize,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Vec<LabeledVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<f64> = (0..count).map(|i| LEVELS[i % LEVELS.len()]).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let video = synth_video(
                &format!("synth{i:04}"),
                label,
                frames,
                height,
                width,
                &mut rng,
            );
            LabeledVideo { video, label }
        })
        .collect()
}

fn synth_video(
    id: &str,
    label: f64,
    frames: usize,
    height: usize,
    width: usize,
    rng: &mut impl Rng,
) -> PackedVideo {
    let base = 255.0 * label;
    let headroom = base.min(255.0 - base);
    let amplitude = (headroom / 1.25).min(40.0) * rng.random_range(0.5..1.0);
    let cell = rng.random_range(1..=3usize);
    let (phase_x, phase_y) = (rng.random_range(0..6usize), rng.random_range(0..6usize));
    let mut pixels = Vec::with_capacity(frames * height * width * CHANNELS);
    for f in 0..frames {
        for y in 0..height {
            for x in 0..width {
                let checker = ((x + phase_x) / cell + (y + phase_y) / cell + f) % 2;
                let sign = if checker == 0 { 1.0 } else { -1.0 };
                let noise = if amplitude > 0.0 {
                    rng.random_range(-0.25..=0.25) * amplitude
                } else {
                    0.0
                };
                let offset = sign * amplitude + noise;
                for tint in TINT {
                    pixels.push((base + tint * offset).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    PackedVideo::new(id, frames, height, width, pixels).expect("consistent dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brightness_encodes_label() {
        let data = synth_dataset(12, 9, 8, 8, 5);
        for lv in &data {
            assert!(
                (lv.video.mean_intensity() - lv.label).abs() < 0.02,
                "{}",
                lv.video.id
            );
            if lv.label == 0.0 {
                assert!(lv.video.pixels.iter().all(|&p| p == 0));
            }
        }
    }

    #[test]
    fn every_level_is_present() {
        let data = synth_dataset(4, 3, 4, 4, 1);
        let mut labels: Vec<f64> = data.iter().map(|d| d.label).collect();
        labels.sort_by(f64::total_cmp);
        assert_eq!(labels, LEVELS.to_vec());
    }

    #[test]
    fn textured_and_seeded() {
        let a = synth_dataset(8, 4, 8, 8, 9);
        assert_eq!(a, synth_dataset(8, 4, 8, 8, 9));
        assert_ne!(a, synth_dataset(8, 4, 8, 8, 10));
        let mid = a.iter().find(|d| d.label == 0.33).unwrap();
        let distinct: std::collections::HashSet<u8> = mid.video.pixels.iter().copied().collect();
        assert!(distinct.len() > 4);
    }
}
