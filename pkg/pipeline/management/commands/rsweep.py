from pipeline.commands import single_stage

Command = single_stage('write_rsweep', 'rsweep', 'Refit the fragility curve for each evacuation threshold in R_VALUES (rsweep.csv)')
