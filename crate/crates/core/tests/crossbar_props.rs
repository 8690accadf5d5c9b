mod common;

use common::*;
use memgan_core::crossbar::{DeviceConfig, QuantSpec};
use memgan_core::mapper::{LayerKind, MappedLayer, MappedMatrix};
use ndarray::Array2;
use proptest::prelude::*;

fn bits() -> impl Strategy<Value = u32> {
    prop::sample::select(vec![4u32, 8, 16, 32])
}

fn max_abs(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

proptest! {
    #[test]
    fn round_trip_error_is_at_most_half_an_lsb(bits in bits(), range in 1e-3f64..1e3, x in -2e3f64..2e3) {
        let spec = QuantSpec::symmetric(bits, range).unwrap();
        let code = spec.quantize_value(x);
        prop_assert!(code >= spec.min_code() && code <= spec.max_code());
        let clipped = x.clamp(-range, range);
        let y = spec.round_trip(x);
        prop_assert!((y - clipped).abs() <= spec.scale() * (0.5 + 1e-9));
        prop_assert_eq!(spec.round_trip(y), y);
    }

    #[test]
    fn stored_matrix_is_within_half_an_lsb(
        bits in bits(),
        rows in 1usize..20,
        cols in 1usize..20,
        xr in 1usize..9,
        xc in 1usize..9,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let m = Array2::from_shape_simple_fn((rows, cols), || uniform(&mut r));
        let dev = DeviceConfig::fixed(bits).with_dims(xr, xc);
        let mapped = MappedMatrix::from_matrix(m.view(), dev).unwrap();
        prop_assert_eq!(mapped.crossbar_count(), rows.div_ceil(xr) * cols.div_ceil(xc));
        let spec = QuantSpec::symmetric(bits, max_abs(&m)).unwrap();
        let err = max_abs(&(&mapped.read() - &m));
        prop_assert!(err <= spec.scale() * (0.5 + 1e-9), "{} > {}", err, spec.scale() / 2.0);
    }

    #[test]
    fn float_tiles_multiply_exactly(rows in 1usize..20, cols in 1usize..20, xr in 1usize..9, xc in 1usize..9, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = Array2::from_shape_simple_fn((rows, cols), || dyadic(&mut r));
        let x: Vec<f64> = (0..rows).map(|_| dyadic(&mut r)).collect();
        let mapped = MappedMatrix::from_matrix(m.view(), DeviceConfig::float().with_dims(xr, xc)).unwrap();
        prop_assert_eq!(&mapped.read(), &m);
        let want: Vec<f64> = (0..cols).map(|c| (0..rows).map(|i| x[i] * m[[i, c]]).sum()).collect();
        prop_assert_eq!(mapped.mvm(&x).unwrap(), want);
    }

    #[test]
    fn error_crossbars_hold_the_transpose(bits in bits(), seed in any::<u64>(), deconv in any::<bool>()) {
        let mut r = rng(seed);
        let kind = if deconv { LayerKind::Deconv } else { LayerKind::Conv };
        let shape = random_shape(&mut r, kind);
        let k = random_kernels(&shape, &mut r, uniform);
        let km = kernel_matrix(&shape, &k);

        let float = MappedLayer::with_kernel_matrix(shape, DeviceConfig::float().with_dims(5, 3), km.view()).unwrap();
        prop_assert_eq!(float.error_crossbars().unwrap().read(), float.weights().read().t().to_owned());

        let fixed = MappedLayer::with_kernel_matrix(shape, DeviceConfig::fixed(bits).with_dims(5, 3), km.view()).unwrap();
        let stored = fixed.weights().read();
        let back = fixed.error_crossbars().unwrap().read();
        let spec = QuantSpec::symmetric(bits, max_abs(&stored)).unwrap();
        prop_assert!(max_abs(&(&back - &stored.t())) <= spec.scale() * (0.5 + 1e-9));
    }

    #[test]
    fn backward_is_the_adjoint_of_forward(seed in any::<u64>(), deconv in any::<bool>()) {
        let mut r = rng(seed);
        let kind = if deconv { LayerKind::Deconv } else { LayerKind::Conv };
        let shape = random_shape(&mut r, kind);
        let k = random_kernels(&shape, &mut r, dyadic);
        let layer = MappedLayer::with_kernel_matrix(shape, DeviceConfig::float().with_dims(4, 4), kernel_matrix(&shape, &k).view()).unwrap();
        let x = feature_map(shape.in_channels, shape.input.0, shape.input.1, || dyadic(&mut r));
        let (oh, ow) = shape.output_dims();
        let delta = feature_map(shape.out_channels, oh, ow, || dyadic(&mut r));
        let y = layer.forward(&x).unwrap();
        let e = layer.backward_input(&layer.error_crossbars().unwrap(), &delta).unwrap();
        let lhs: f64 = (&y * &delta).sum();
        let rhs: f64 = (&x * &e).sum();
        prop_assert_eq!(lhs, rhs);

        // forward is linear in the kernel matrix, so <delta, y> = <grad, K>
        let g = layer.weight_gradient(&x, &delta).unwrap();
        prop_assert_eq!((&g * &layer.kernel_matrix()).sum(), lhs);
    }
}
