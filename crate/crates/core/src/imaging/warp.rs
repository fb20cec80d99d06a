use crate::imaging::grid::ImageGrid;
use crate::imaging::mask::LabelMask;
use crate::registration::Transformation;

/// Pull-back of a label mask: target cell `x` receives the label of the source
/// cell containing `y(x)`, or background when `y(x)` leaves `Ω`.
///
/// With this convention a displacement of `+d` moves the visible structure by
/// `−d`: `y(x) = x + (1, 0)` shifts every region one pixel towards smaller `u`.
pub fn warp_mask(
    mask: &LabelMask,
    y: &impl Transformation<f64>,
    target_grid: &ImageGrid,
) -> LabelMask {
    let source = mask.grid();
    let mut labels = Vec::with_capacity(target_grid.len());
    for j in 0..target_grid.height() {
        for i in 0..target_grid.width() {
            let p = y.map(target_grid.cell_center(i, j));
            let code = match source.cell_containing(p) {
                Some((si, sj)) => mask.labels()[source.index(si, sj)],
                None => 0,
            };
            labels.push(code);
        }
    }
    LabelMask::new(*target_grid, labels).expect("labels copied from a valid mask")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::{AffineTransform, DisplacementField, Identity};

    #[test]
    fn identity_keeps_the_mask() {
        let g = ImageGrid::new(7, 5).unwrap();
        let m = LabelMask::new(g, (0..35).map(|k| (k % 3) as u8).collect()).unwrap();
        assert_eq!(warp_mask(&m, &Identity, &g), m);
        assert_eq!(warp_mask(&m, &DisplacementField::<f64>::zeros(g), &g), m);
    }

    #[test]
    fn everything_outside_gives_background() {
        let g = ImageGrid::new(6, 6).unwrap();
        let m = LabelMask::new(g, vec![1; 36]).unwrap();
        let away = AffineTransform::translation([100.0, 0.0]);
        assert_eq!(warp_mask(&m, &away, &g), LabelMask::background(g));
    }
}
