# Towns
default_lane_width = 3.5  # m
default_block_length_a = 100.0  # m
default_block_length_b = 80.0  # m
default_connector_radius = 8.0  # m
default_polyline_spacing = 2.0  # m, segment centerline sampling
default_path_spacing = 0.5  # m, route path sampling
default_runout_length = 20.0  # m, path continued past the goal
default_drivable_margin = 0.5  # m
default_sidewalk_width = 1.0  # m, static geometry beyond it
default_curvature_lookaheads = (5.0, 10.0, 20.0)  # m
default_intersection_clip = 50.0  # m

# Commands
default_command_window = 25.0  # m
default_off_route_distance = 20.0  # m

# Vehicle
default_wheelbase = 2.5  # m
default_max_wheel_angle = 0.6109  # rad
default_accel_gain = 3.0  # m/s^2 at full throttle
default_brake_gain = 8.0  # m/s^2 at full brake
default_drag_coefficient = 0.05  # 1/s
default_control_period = 0.1  # s, 10 Hz
default_physics_substep = 0.02  # s

# Expert
default_min_lookahead = 4.0  # m
default_lookahead_time = 0.5  # s
default_cruise_speed = 9.72  # m/s, 35 km/h
default_turn_speed = 5.56  # m/s, 20 km/h
default_turn_curvature_threshold = 0.02  # 1/m
default_turn_curvature_lookahead = 10.0  # m
default_speed_gain = 0.5

# Action noise during collection
default_noisy_episode_fraction = 0.1
default_impulse_rate = 1.0 / 20.0  # 1/s
default_impulse_duration_range = (0.5, 2.0)  # s
default_impulse_peak_range = (0.15, 0.5)

# Training
default_batch_size = 120
default_steering_bins = 8
default_balance_epochs = 50
default_irls_epsilon = 1e-6
default_irls_tolerance = 1e-8
default_irls_max_iterations = 200
default_ridge_floor = 1e-10
default_feature_noise_std = 0.01

# Datasets
default_frame_rate = 10  # Hz
default_validation_hours = 0.2  # h
default_lateral_camera_yaw = 0.5235987755982988  # rad, 30 deg
default_float_digits = 9

# Offline metrics
default_cumulative_window = 64  # steps
default_quantization_sigma = 0.03
default_relative_error_alpha = 0.1

# Online evaluation
default_goal_radius = 2.0  # m
default_budget_speed = 10.0 / 3.6  # m/s, 10 km/h
default_stuck_speed = 0.1  # m/s
default_stuck_time = 10.0  # s
default_infraction_min_duration = 0.5  # s
default_infraction_rearm_time = 2.0  # s
default_suite_trials = 25
default_suite_route_range = (200.0, 1000.0)  # m

# Analysis
default_keep_fraction = 0.5

# CLI
default_output_dir = "driveval-out"
default_master_seed = 0
