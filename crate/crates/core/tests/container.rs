use enorm::io::{decode_network, encode_network, load_network, read_manifest, save_network};
use enorm::model::{conv_layer, linear_layer, mlp, resblock};
use enorm::{Dtype, Error, Layer, Network, Shape};

fn conv_net(dtype: Dtype) -> Network {
    let mut rng = enorm::rng(3);
    let layers = vec![
        conv_layer(2, 4, 3, 1, 1, true, &mut rng),
        Layer::Relu,
        Layer::MaxPool2d { kernel: 2, stride: 2 },
        resblock(4, 6, 2, true, &mut rng),
        Layer::Relu,
        Layer::Flatten,
        linear_layer(6 * 2 * 2, 3, true, &mut rng),
    ];
    let mut net = Network::new(Shape::new(2, 8, 8), layers, dtype).unwrap();
    net.round_to_dtype();
    net
}

#[test]
fn files_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    for (i, net) in [conv_net(Dtype::F64), conv_net(Dtype::F32), mlp(&[3, 5, 2], false, &mut enorm::rng(1)).unwrap()]
        .into_iter()
        .enumerate()
    {
        let path = dir.path().join(format!("{i}.enorm"));
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back.dtype, net.dtype);
        for (a, b) in net.tensors().iter().zip(back.tensors()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back, net);
    }
}

#[test]
fn f32_blob_is_half_the_size() {
    let a = encode_network(&conv_net(Dtype::F64)).unwrap();
    let b = encode_network(&conv_net(Dtype::F32)).unwrap();
    let (ma, blob_a) = read_manifest(&a).unwrap();
    let (mb, blob_b) = read_manifest(&b).unwrap();
    assert_eq!(ma.blob_len, 2 * mb.blob_len);
    assert_eq!(blob_a.len(), 2 * blob_b.len());
    assert!(a.starts_with(b"ENORMNET"));
}

#[test]
fn truncated_file_names_the_layer() {
    let bytes = encode_network(&conv_net(Dtype::F64)).unwrap();
    let cut = &bytes[..bytes.len() - 8];
    let err = decode_network(cut).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    let msg = err.to_string();
    assert!(msg.contains("layer 6"), "{msg}");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_network("/nonexistent/dir/net.enorm").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}
