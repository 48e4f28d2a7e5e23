use super::{BinaryImage, Image};

// 3x3 square structuring element, applied separably. Out-of-image
// neighbours are ignored, so erosion does not eat in from the border.
fn rank3x3(img: &BinaryImage, pick: fn(u8, u8) -> u8) -> BinaryImage {
    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut tmp = vec![0u8; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let dst = &mut tmp[y * w..(y + 1) * w];
        for x in 0..w {
            let mut v = row[x];
            if x > 0 {
                v = pick(v, row[x - 1]);
            }
            if x + 1 < w {
                v = pick(v, row[x + 1]);
            }
            dst[x] = v;
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut v = tmp[y * w + x];
            if y > 0 {
                v = pick(v, tmp[(y - 1) * w + x]);
            }
            if y + 1 < h {
                v = pick(v, tmp[(y + 1) * w + x]);
            }
            out[y * w + x] = v;
        }
    }
    Image {
        width: w,
        height: h,
        data: out,
    }
}

pub fn erode3x3(img: &BinaryImage) -> BinaryImage {
    rank3x3(img, u8::min)
}

pub fn dilate3x3(img: &BinaryImage) -> BinaryImage {
    rank3x3(img, u8::max)
}

pub fn open3x3(img: &BinaryImage) -> BinaryImage {
    dilate3x3(&erode3x3(img))
}

pub fn close3x3(img: &BinaryImage) -> BinaryImage {
    erode3x3(&dilate3x3(img))
}

/// Opening followed by closing, one iteration each with a 3×3 square.
pub fn morph_open_close(img: &BinaryImage) -> BinaryImage {
    close3x3(&open3x3(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(w: usize, h: usize, b: (usize, usize, usize, usize)) -> BinaryImage {
        Image::from_fn(w, h, |x, y| {
            if x >= b.0 && x < b.0 + b.2 && y >= b.1 && y < b.1 + b.3 {
                255
            } else {
                0
            }
        })
    }

    #[test]
    fn speckle_is_removed() {
        let mut img = BinaryImage::new(9, 9);
        img.set(4, 4, 255);
        assert!(morph_open_close(&img).data().iter().all(|&v| v == 0));
    }

    #[test]
    fn solid_square_is_unchanged() {
        let img = square(20, 20, (5, 5, 10, 10));
        assert_eq!(morph_open_close(&img), img);
    }

    #[test]
    fn pinhole_is_filled() {
        let mut img = square(20, 20, (5, 5, 10, 10));
        img.set(9, 9, 0);
        assert_eq!(morph_open_close(&img), square(20, 20, (5, 5, 10, 10)));
    }

    fn arb_mask() -> impl Strategy<Value = BinaryImage> {
        (3usize..16, 3usize..16).prop_flat_map(|(w, h)| {
            proptest::collection::vec(prop_oneof![Just(0u8), Just(255u8)], w * h)
                .prop_map(move |d| Image::from_vec(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn opening_and_closing_are_idempotent(img in arb_mask()) {
            let o = open3x3(&img);
            prop_assert_eq!(open3x3(&o), o);
            let c = close3x3(&img);
            prop_assert_eq!(close3x3(&c), c);
            let oc = morph_open_close(&img);
            prop_assert_eq!(morph_open_close(&oc), oc);
        }
    }
}
