import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roverlab.rover import (BodyCommand, ControlLimits, RoverGeometry, RoverState,
                            body_twist_from_wheels, step_pose,
                            wheels_from_body_twist, wrap_angle)

finite = st.floats(-10.0, 10.0, allow_nan=False)


class TestWrapAngle:
    def test_half_open_interval(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)

    @given(a=st.floats(-50.0, 50.0))
    def test_always_in_range(self, a):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


class TestKinematics:
    def test_symmetric_wheels_pure_translation(self):
        assert body_twist_from_wheels(1.0, 1.0, 0.9) == (1.0, 0.0)

    def test_opposite_wheels_pure_rotation(self):
        v, w = body_twist_from_wheels(-1.0, 1.0, 1.0)
        assert v == 0.0
        assert w == 2.0

    def test_mixed_wheels(self):
        v, w = body_twist_from_wheels(0.5, 1.0, 0.9)
        assert v == pytest.approx(0.75)
        assert w == pytest.approx(0.5556, abs=1e-4)

    def test_inverse_pure_translation(self):
        assert wheels_from_body_twist(BodyCommand(1.0, 0.0), 0.9) == (1.0, 1.0)

    def test_inverse_pure_rotation(self):
        assert wheels_from_body_twist(BodyCommand(0.0, 2.0), 1.0) == (-1.0, 1.0)

    def test_round_trip_many_random_commands(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            v, w = rng.uniform(-3, 3, 2)
            track = rng.uniform(0.2, 2.0)
            vl, vr = wheels_from_body_twist(BodyCommand(v, w), track)
            v2, w2 = body_twist_from_wheels(vl, vr, track)
            assert abs(v2 - v) <= 1e-12
            assert abs(w2 - w) <= 1e-12

    @given(v=finite, w=finite, track=st.floats(0.1, 3.0))
    def test_round_trip_property(self, v, w, track):
        vl, vr = wheels_from_body_twist(BodyCommand(v, w), track)
        v2, w2 = body_twist_from_wheels(vl, vr, track)
        assert abs(v2 - v) <= 1e-12
        assert abs(w2 - w) <= 1e-12

    def test_zero_track_rejected(self):
        with pytest.raises(ValueError):
            body_twist_from_wheels(1.0, 1.0, 0.0)


class TestGeometry:
    def test_track_must_fit_in_body(self):
        with pytest.raises(ValueError):
            RoverGeometry(track_width=1.2)

    def test_footprint_radius(self):
        assert RoverGeometry().footprint_radius == pytest.approx(0.56)


def rest_state(flat_field, x=0.0, y=0.0, heading=0.0):
    return RoverState(x=x, y=y, z=0.05, heading=heading)


class TestStepPose:
    def test_steady_state_advances_exactly(self, flat_field):
        state = RoverState(x=0.0, y=0.0, z=0.05, heading=0.0,
                           wheel_speeds=(1.0, 1.0, 1.0, 1.0))
        out = step_pose(state, BodyCommand(1.0, 0.0), 9.81, 0.8, flat_field,
                        dt=0.1, track=0.95)
        assert out.x == pytest.approx(0.1, abs=1e-15)
        assert out.y == 0.0
        assert out.heading == 0.0

    def test_lunar_traction_limit_from_rest(self, flat_field):
        out = step_pose(rest_state(flat_field), BodyCommand(1.0, 0.0), 1.62, 0.45,
                        flat_field, dt=0.1, track=0.95)
        assert out.wheel_speeds == (0.0729, 0.0729, 0.0729, 0.0729)

    def test_farm_traction_limit_from_rest(self, flat_field):
        out = step_pose(rest_state(flat_field), BodyCommand(1.0, 0.0), 9.81, 0.8,
                        flat_field, dt=0.1, track=0.95)
        assert out.wheel_speeds[0] == pytest.approx(0.7848)

    def test_zero_command_from_rest_keeps_pose(self, flat_field):
        state = rest_state(flat_field, x=1.0, y=-2.0, heading=0.3)
        out = step_pose(state, BodyCommand(0.0, 0.0), 9.81, 0.8, flat_field,
                        dt=0.1, track=0.95)
        assert (out.x, out.y, out.heading) == (1.0, -2.0, 0.3)
        assert out.z == 0.05

    def test_wheel_pairing_invariant(self, flat_field):
        out = step_pose(rest_state(flat_field), BodyCommand(0.8, 1.2), 9.81, 0.8,
                        flat_field, dt=0.1, track=0.95)
        w = out.wheel_speeds
        assert w[0] == w[2] and w[1] == w[3]

    def test_out_of_extent_flagged(self, flat_field):
        state = rest_state(flat_field, x=7.49, y=0.0)
        out = step_pose(state, BodyCommand(1.5, 0.0), 9.81, 0.8, flat_field,
                        dt=0.5, track=0.95)
        # cannot exceed traction in one step, so push with pre-spun wheels
        state = RoverState(x=7.49, y=0.0, z=0.05, heading=0.0,
                           wheel_speeds=(1.5, 1.5, 1.5, 1.5))
        out = step_pose(state, BodyCommand(1.5, 0.0), 9.81, 0.8, flat_field,
                        dt=0.1, track=0.95)
        assert out.out_of_bounds
        assert out.z == 0.05  # previous elevation kept

    @given(mu_g=st.tuples(st.floats(0.1, 1.0), st.floats(1.0, 12.0)),
           v_cmd=st.floats(-1.5, 1.5), w_cmd=st.floats(-1.5, 1.5),
           vl0=st.floats(-1.5, 1.5), vr0=st.floats(-1.5, 1.5))
    def test_traction_bound_property(self, flat_field, mu_g, v_cmd, w_cmd, vl0, vr0):
        mu, g = mu_g
        state = RoverState(x=0.0, y=0.0, z=0.05, heading=0.0,
                           wheel_speeds=(vl0, vr0, vl0, vr0))
        out = step_pose(state, BodyCommand(v_cmd, w_cmd), g, mu, flat_field,
                        dt=0.1, track=0.95)
        bound = mu * g * 0.1 + 1e-12
        assert abs(out.wheel_speeds[0] - vl0) <= bound
        assert abs(out.wheel_speeds[1] - vr0) <= bound

    def test_lower_traction_slower_to_target(self, flat_field):
        def steps_to_speed(mu, g):
            state = rest_state(flat_field)
            for n in range(1, 200):
                state = step_pose(state, BodyCommand(1.0, 0.0), g, mu, flat_field,
                                  dt=0.1, track=0.95)
                if state.wheel_speeds[0] >= 1.0 - 1e-12:
                    return n
            return 200

        assert steps_to_speed(0.45, 1.62) >= steps_to_speed(0.8, 9.81)

    @given(cmds=st.lists(st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)),
                         min_size=1, max_size=30))
    def test_heading_stays_wrapped(self, flat_field, cmds):
        state = rest_state(flat_field)
        for v, w in cmds:
            state = step_pose(state, BodyCommand(v, w), 9.81, 0.8, flat_field,
                              dt=0.1, track=0.95)
            assert -math.pi < state.heading <= math.pi
            if state.out_of_bounds:
                break
