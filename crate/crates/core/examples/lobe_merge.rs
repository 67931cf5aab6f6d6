//! Merges separate left and right lung masks into one, the way `prepare`
//! does for datasets annotated per lobe.
//!
//!     cargo run --example lobe_merge -- [se_size]

use segforge::dataset::merge_lobes;
use segforge::morphology::{BinaryMask, StructuringElement};

fn main() -> segforge::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let (h, w) = (14, 30);
    let left = BinaryMask::from_fn(h, w, |y, x| (3..11).contains(&y) && (4..12).contains(&x) && x + 3 > y);
    let right = BinaryMask::from_fn(h, w, |y, x| (3..12).contains(&y) && (17..26).contains(&x));

    let merged = merge_lobes(&left, &right, &StructuringElement::square(size))?;
    println!("left\n{left:?}\nright\n{right:?}\nmerged with a {size}x{size} element\n{merged:?}");
    println!(
        "{} + {} lobe pixels -> {} merged; union kept: {}",
        left.count(),
        right.count(),
        merged.count(),
        left.union(&right)?.is_subset(&merged)
    );
    Ok(())
}
