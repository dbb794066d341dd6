//! Procedural class-conditional textures used to train the toy denoiser.

use rand::Rng;

use crate::tensor::LatentTensor;

pub const TEXTURE_CLASSES: [&str; 2] = ["stripes", "checkers"];

fn random_colour(rng: &mut impl Rng) -> [f32; 3] {
    [
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
    ]
}

/// One `height x width x 3` texture of class `class` (0 = stripes,
/// 1 = checkers) with pixel values in `[0, 1]`. Periods scale with the
/// texture size so the pattern survives block-average encoding.
pub fn texture(class: usize, height: usize, width: usize, rng: &mut impl Rng) -> LatentTensor {
    let size = height.min(width).max(4) as f32;
    let period = rng.random_range(size / 8.0..size / 3.0).max(2.0);
    let phase_r = rng.random_range(0.0..period);
    let phase_c = rng.random_range(0.0..period);
    let fg = random_colour(rng);
    let bg = random_colour(rng);
    let orientation = rng.random_range(0..3u8);

    LatentTensor::from_fn(height, width, 3, |r, c, k| {
        let (y, x) = (r as f32 + phase_r, c as f32 + phase_c);
        let on = match class {
            0 => {
                let coord = match orientation {
                    0 => y,
                    1 => x,
                    _ => (x + y) * std::f32::consts::FRAC_1_SQRT_2,
                };
                (coord / (period * 0.5)).floor() as i64 % 2 == 0
            }
            _ => {
                let cy = (y / (period * 0.5)).floor() as i64;
                let cx = (x / (period * 0.5)).floor() as i64;
                (cy + cx) % 2 == 0
            }
        };
        if on {
            fg[k]
        } else {
            bg[k]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn textures_are_in_range_and_reproducible() {
        let a = texture(0, 32, 32, &mut ChaCha8Rng::seed_from_u64(1));
        let b = texture(0, 32, 32, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let c = texture(1, 32, 48, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(c.shape(), [32, 48, 3]);
    }

    #[test]
    fn checkers_use_two_colours() {
        let t = texture(1, 16, 16, &mut ChaCha8Rng::seed_from_u64(9));
        let mut colours: Vec<[u32; 3]> = (0..16)
            .flat_map(|r| (0..16).map(move |c| (r, c)))
            .map(|(r, c)| {
                let v = t.cell(r, c);
                [v[0].to_bits(), v[1].to_bits(), v[2].to_bits()]
            })
            .collect();
        colours.sort();
        colours.dedup();
        assert!(colours.len() <= 2);
    }
}
