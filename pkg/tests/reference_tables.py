"""Reference WER table rows: (condition cells, printed Avg).

Cells are condition WERs in percent; the last number of each row is the
printed average.
"""

# Test on WSJ+ADT noise, SNR -6..9 dB.
TABLE_I = {
    "unprocessed": ([97.29, 89.49, 70.75, 46.11, 27.53, 15.64], 57.80),
    "row1": ([54.03, 31.52, 17.90, 10.83, 7.16, 4.93], 21.06),
    "row2": ([37.15, 19.82, 10.69, 6.08, 4.22, 3.53], 13.58),
    "row3": ([31.96, 16.79, 8.96, 5.39, 4.08, 3.03], 11.70),
    "row4": ([39.36, 20.86, 11.02, 6.16, 4.40, 3.20], 14.16),
    "row5": ([18.40, 9.95, 5.43, 3.83, 3.39, 2.88], 7.31),
    "row6": ([18.81, 9.75, 5.43, 3.95, 3.25, 2.97], 7.36),
}

# Reverberant WSJ, T60 bins 0.2-0.4 .. 0.8-1.0 s.
TABLE_II = {
    "unprocessed": ([15.21, 33.55, 50.36, 57.93], 39.26),
    "row1": ([3.47, 4.32, 4.52, 5.32], 4.41),
    "row2": ([3.27, 4.35, 4.46, 5.14], 4.31),
    "row3": ([2.45, 2.97, 3.23, 3.29], 2.99),
    "row4": ([2.41, 2.93, 3.18, 3.53], 3.01),
}

# Reverberant-noisy WSJ, per T60 bin, SNR -6..9 dB.
TABLE_III = {
    "t1_clean": ([96.02, 93.01, 84.49, 67.93, 49.65, 35.31], 71.07),
    "t1_noisy160k": ([52.39, 31.38, 17.65, 10.24, 6.52, 5.02], 20.53),
    "t1_noisy320k": ([48.60, 28.18, 15.57, 9.27, 6.34, 4.89], 18.81),
    "t1_arn_pcm": ([37.97, 20.81, 12.03, 7.72, 5.35, 4.12], 14.66),
    "t1_arn_stoi": ([37.96, 20.90, 11.42, 7.17, 5.13, 4.12], 14.45),
    "t2_clean": ([96.70, 94.98, 89.45, 79.14, 66.70, 53.64], 80.10),
    "t2_noisy160k": ([55.33, 34.73, 19.81, 12.08, 8.04, 5.97], 22.66),
    "t2_noisy320k": ([51.58, 31.38, 18.56, 11.28, 7.41, 5.58], 20.96),
    "t2_arn_pcm": ([46.54, 27.73, 15.09, 9.38, 5.97, 4.69], 18.23),
    "t2_arn_stoi": ([45.98, 27.37, 15.01, 9.36, 5.95, 4.65], 18.05),
    "t3_clean": ([96.90, 95.75, 91.89, 85.16, 75.62, 66.62], 85.32),
    "t3_noisy160k": ([58.86, 37.87, 21.93, 13.97, 9.48, 6.96], 24.84),
    "t3_noisy320k": ([55.46, 34.40, 20.54, 12.81, 8.26, 6.02], 22.91),
    "t3_arn_pcm": ([52.74, 32.27, 18.37, 11.31, 7.44, 5.62], 21.29),
    "t3_arn_stoi": ([52.58, 31.06, 17.86, 10.91, 7.21, 5.48], 20.85),
    "t4_mixture": ([97.13, 96.25, 93.88, 88.58, 81.80, 74.22], 88.64),
    "t4_noisy160k": ([61.04, 39.64, 24.64, 15.36, 10.21, 7.43], 26.38),
    "t4_noisy320k": ([58.48, 37.06, 21.94, 13.70, 9.30, 7.19], 24.61),
    "t4_arn_pcm": ([57.55, 34.77, 20.36, 12.23, 8.31, 6.16], 23.23),
    "t4_arn_stoi": ([57.06, 34.46, 20.04, 12.11, 8.32, 6.19], 23.03),
}

# CHiME-2, SNR -6..9 dB. Row 8 is reported with one decimal.
TABLE_IV = {
    "unprocessed": ([73.81, 64.88, 57.59, 45.10, 36.05, 28.54], 51.00),
    "row1": ([17.45, 13.06, 10.69, 8.82, 7.72, 6.63], 10.73),
    "row2": ([19.82, 13.30, 10.91, 9.25, 7.25, 6.63], 11.19),
    "row3": ([16.25, 10.16, 9.25, 7.08, 6.54, 5.64], 9.15),
    "row4": ([14.83, 9.98, 8.95, 6.78, 6.26, 5.49], 8.72),
    "row5": ([14.44, 10.33, 7.92, 6.73, 6.03, 5.49], 8.49),
    "row6": ([15.45, 11.04, 9.70, 7.10, 6.54, 5.51], 9.22),
    "row7": ([13.11, 9.43, 7.92, 6.20, 5.45, 4.54], 7.78),
    "row8": ([15.2, 10.9, 8.3, 6.7, 5.8, 5.2], 8.7),
    "row9": ([13.30, 9.66, 7.83, 6.41, 5.25, 4.60], 7.84),
    "row10": ([9.94, 7.04, 6.50, 5.45, 4.54, 4.22], 6.28),
    "row11": ([8.46, 6.54, 5.53, 4.84, 4.48, 4.09], 5.62),
    "row12": ([7.75, 6.74, 5.16, 5.21, 4.37, 4.18], 5.57),
    "row13": ([9.14, 7.53, 6.22, 5.44, 5.23, 4.61], 6.36),
}

TABLES = {"I": TABLE_I, "II": TABLE_II, "III": TABLE_III, "IV": TABLE_IV}
