use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smartlet_core::assembler::{assemble, disassemble, format_program, parse_program};
use smartlet_core::bubble_dynamics::{BubbleParams, FaceBubbles};
use smartlet_core::lablet_vm::{
    decode_run_command, ActMask, ControllerState, LabletProgram, PhaseConfig, ProgramWord, SensorCondition,
    TransitionMode, PROGRAM_BITS,
};
use smartlet_core::optical_link::{manchester_decode, manchester_encode, Command, Convention, OpticalFrame};

fn phase() -> impl Strategy<Value = PhaseConfig> {
    (0u8..8, 0u8..16, 0u8..8, 0u8..16).prop_map(|(m, p, d, t)| PhaseConfig::new(ActMask::new(m).unwrap(), p, d, t).unwrap())
}

fn program() -> impl Strategy<Value = LabletProgram> {
    ([phase(), phase(), phase()], 0usize..8, 0usize..4, 0u8..8).prop_map(|(phases, c, m, debounce_ticks)| LabletProgram {
        phases,
        condition: SensorCondition::ALL[c],
        mode: TransitionMode::ALL[m],
        debounce_ticks,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn word_round_trip(p in program()) {
        let word = p.assemble().unwrap();
        prop_assert!(word.value() < 1 << PROGRAM_BITS);
        prop_assert_eq!(decode_run_command(word).unwrap(), p);
    }

    #[test]
    fn text_round_trip(p in program()) {
        let text = format_program(&p);
        prop_assert_eq!(parse_program(&text).unwrap(), p);
        let word = assemble(&text).unwrap();
        prop_assert_eq!(assemble(&disassemble(word).unwrap()).unwrap(), word);
    }

    #[test]
    fn single_bit_flip_is_rejected(p in program(), bit in 0usize..PROGRAM_BITS) {
        let word = p.assemble().unwrap();
        prop_assert!(decode_run_command(word.flip(bit)).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn manchester_round_trip(p in program(), cmd in 1u8..5, high_low in any::<bool>(), half_bit in 1.0f64..20.0) {
        let convention = if high_low { Convention::HighLowIsOne } else { Convention::LowHighIsOne };
        let frame = OpticalFrame::new(Command::from_code(cmd), p.assemble().unwrap());
        let wave = manchester_encode(&frame, half_bit, convention).unwrap();
        prop_assert_eq!(manchester_decode(&wave, convention).unwrap(), frame);
        prop_assert_eq!(OpticalFrame::from_hex(&frame.to_hex()).unwrap(), frame);
    }

    #[test]
    fn jittered_frames_decode(p in program(), seed in any::<u64>()) {
        let frame = OpticalFrame::new(Command::Load, p.assemble().unwrap());
        let wave = manchester_encode(&frame, 5.0, Convention::default()).unwrap();
        let noisy = wave.with_edge_jitter(0.15, 5.0, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(manchester_decode(&noisy, Convention::default()).unwrap(), frame);
    }

    #[test]
    fn merging_conserves_gas(count in 2u32..400, radius in 10.0f64..60.0) {
        let params = BubbleParams::default();
        let mut face = FaceBubbles { count, mean_radius_um: radius, anchored: true, pending: 0.0 };
        let before = face.gas_volume_um3();
        if face.merge_round(&params) {
            prop_assert_eq!(face.count, count.div_ceil(2));
            prop_assert!(((face.gas_volume_um3() - before) / before).abs() < 1e-12);
        } else {
            prop_assert_eq!(face.count, count);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn act_stays_inside_phase_mask(p in program(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = ControllerState::running();
        for _ in 0..10_000 {
            let din = rand::Rng::gen_bool(&mut rng, 0.1);
            let out = state.step(&p, din);
            let mask = p.phase(state.phase).map_or(ActMask::NONE, |c| c.act_mask);
            prop_assert!(out.act.is_subset_of(mask));
            prop_assert_eq!(out.dout, out.transition.is_some());
        }
    }
}

#[test]
fn every_word_either_decodes_or_fails_parity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let raw = rand::Rng::gen_range(&mut rng, 0..1u64 << PROGRAM_BITS);
        let word = ProgramWord::from_u64(raw).unwrap();
        if let Ok(p) = decode_run_command(word) {
            assert_eq!(p.assemble().unwrap(), word);
        }
    }
}
